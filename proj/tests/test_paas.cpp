#include "dgform/error.hpp"
#include "dgform/paas.hpp"
#include "shape_fixtures.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

using namespace dgform;

namespace {

// Exhaustive search over all compositions of n into k parts.
double best_rounding_error(const std::vector<double>& areas, int n) {
  const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
  const int k = static_cast<int>(areas.size());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> counts(k, 0);
  std::function<void(int, int)> rec = [&](int layer, int left) {
    if (layer == k - 1) {
      counts[layer] = left;
      double err = 0.0;
      for (int m = 0; m < k; ++m) err += std::abs(counts[m] - n * areas[m] / total);
      best = std::min(best, err);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      counts[layer] = c;
      rec(layer + 1, left - c);
    }
  };
  rec(0, n);
  return best;
}

FormationShape stacked_squares(const std::vector<double>& areas) {
  FormationShape s;
  s.dz = 0.5;
  for (std::size_t m = 0; m < areas.size(); ++m) s.layers.push_back(fixtures::square(std::sqrt(areas[m]), 0.5 * m));
  return s;
}

// Brute-force Lloyd on a 200 x 200 cell-center grid of the unit square.
struct FineGrid {
  std::vector<Vec2> samples;
  FineGrid() {
    for (int i = 0; i < 200; ++i)
      for (int j = 0; j < 200; ++j) samples.emplace_back((i + 0.5) / 200.0, (j + 0.5) / 200.0);
  }
  double cost(const std::vector<Vec2>& gens) const {
    double total = 0.0;
    for (const auto& s : samples) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& g : gens) best = std::min(best, (s - g).squaredNorm());
      total += best;
    }
    return total / samples.size();
  }
  double reference_lloyd(int count, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec2> gens;
    for (int i = 0; i < count; ++i) gens.emplace_back(u(rng), u(rng));
    for (int it = 0; it < 1000; ++it) {
      std::vector<Vec2> sum(count, Vec2::Zero());
      std::vector<int> num(count, 0);
      for (const auto& s : samples) {
        int best = 0;
        for (int g = 1; g < count; ++g)
          if ((s - gens[g]).squaredNorm() < (s - gens[best]).squaredNorm()) best = g;
        sum[best] += s;
        ++num[best];
      }
      double moved = 0.0;
      for (int g = 0; g < count; ++g) {
        if (num[g] == 0) continue;
        const Vec2 c = sum[g] / num[g];
        moved = std::max(moved, (c - gens[g]).norm());
        gens[g] = c;
      }
      if (moved < 1e-10) break;
    }
    return cost(gens);
  }
};

double min_distance(const std::vector<Vec2>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, (pts[i] - pts[j]).norm());
  return best;
}

}  // namespace

TEST_CASE("layer allocation") {
  SUBCASE("area ratio 1:2 with 12 agents") {
    CHECK(allocate_layer_counts(stacked_squares({1.0, 2.0}), 12).counts == std::vector<int>{4, 8});
    CHECK(allocate_layer_counts(fixtures::frustum(), 12).counts == std::vector<int>{8, 4});
  }
  SUBCASE("single layer") {
    CHECK(allocate_layer_counts(fixtures::single(fixtures::heart()), 20).counts == std::vector<int>{20});
  }
  SUBCASE("equal areas split like the exhaustive oracle") {
    const std::vector<double> areas{1, 1, 1};
    const auto a = allocate_layer_counts(stacked_squares(areas), 10);
    CHECK(std::accumulate(a.counts.begin(), a.counts.end(), 0) == 10);
    auto sorted = a.counts;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{3, 3, 4});
  }
  SUBCASE("random areas reach the exhaustive minimum rounding error") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 2 + trial % 3;
      std::vector<double> areas(k);
      for (auto& a : areas) a = u(rng);
      const int n = k + trial % 17;
      const auto alloc = allocate_layer_counts(stacked_squares(areas), n);
      const double total = std::accumulate(areas.begin(), areas.end(), 0.0);
      double err = 0.0;
      for (int m = 0; m < k; ++m) err += std::abs(alloc.counts[m] - n * areas[m] / total);
      CHECK(std::accumulate(alloc.counts.begin(), alloc.counts.end(), 0) == n);
      for (int c : alloc.counts) CHECK(c >= 1);
      // rounding may only lose optimality when the >=1 fix-up kicked in
      const bool fixed = std::any_of(areas.begin(), areas.end(), [&](double a) { return n * a / total < 0.5; });
      if (!fixed) CHECK(err == doctest::Approx(best_rounding_error(areas, n)).epsilon(1e-12));
    }
  }
  SUBCASE("every layer gets an agent when n >= k") {
    const auto a = allocate_layer_counts(stacked_squares({100.0, 1.0, 1.0}), 3);
    CHECK(a.counts == std::vector<int>{1, 1, 1});
    CHECK_FALSE(a.under_allocated);
  }
  SUBCASE("fewer agents than layers is flagged") {
    const auto a = allocate_layer_counts(stacked_squares({1.0, 1.0, 1.0}), 2);
    CHECK(std::accumulate(a.counts.begin(), a.counts.end(), 0) == 2);
    CHECK(a.under_allocated);
  }
}

TEST_CASE("lloyd with one generator lands on the centroid") {
  const Polygon2 heart = fixtures::heart();
  const auto r = lloyd_partition(heart, 1, 0);
  REQUIRE(r.generators.size() == 1);
  const double spacing = polygon_diameter(heart) / 200.0;
  CHECK((r.generators[0] - polygon_centroid(heart)).norm() < spacing);
}

TEST_CASE("lloyd on the unit square matches the fine-grid reference") {
  const FineGrid fine;
  double reference = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 10; ++seed) reference = std::min(reference, fine.reference_lloyd(4, seed));
  const auto r = lloyd_partition(fixtures::square(1.0, 0.0, Vec2(0.5, 0.5)), 4, 1);
  const double ours = fine.cost(r.generators);
  CHECK(std::abs(ours - reference) / reference < 1e-3);
}

TEST_CASE("lloyd cost history is non-increasing") {
  for (int count : {3, 7, 20}) {
    const auto r = lloyd_partition(fixtures::pentagram(1.0), count, 4);
    REQUIRE(r.cost_history.size() >= 2);
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
  }
}

TEST_CASE("heart partition stays inside and distinct") {
  const Polygon2 heart = fixtures::heart();
  const auto r = lloyd_partition(heart, 20, 2);
  REQUIRE(r.generators.size() == 20);
  for (const auto& g : r.generators) CHECK(point_in_polygon(g, heart));
  CHECK(min_distance(r.generators) > 0.0);
}

TEST_CASE("lloyd rejects more generators than samples") {
  LloydOptions opts;
  opts.sample_divisor = 4;
  CHECK_THROWS_AS(lloyd_partition(fixtures::square(1.0, 0.0), 1000, 0, opts), Error);
}

TEST_CASE("hungarian assignment") {
  SUBCASE("identity") {
    Eigen::MatrixXd c(2, 2);
    c << 0, 1, 1, 0;
    const auto a = hungarian_assign(c);
    CHECK(a.target_of == std::vector<int>{0, 1});
    CHECK(a.total_cost == 0.0);
  }
  SUBCASE("all equal") {
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(6, 6, 2.5);
    CHECK(hungarian_assign(c).total_cost == doctest::Approx(15.0));
  }
  SUBCASE("random 8x8 against all permutations") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::MatrixXd c(8, 8);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) c(i, j) = u(rng);
      std::vector<int> perm(8);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double s = 0.0;
        for (int i = 0; i < 8; ++i) s += c(i, perm[i]);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const auto a = hungarian_assign(c);
      auto seen = a.target_of;
      std::sort(seen.begin(), seen.end());
      for (int i = 0; i < 8; ++i) CHECK(seen[i] == i);
      CHECK(a.total_cost == best);
    }
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(hungarian_assign(Eigen::MatrixXd::Zero(2, 3)), Error);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2, 2);
    c(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hungarian_assign(c), Error);
  }
}

TEST_CASE("safety scale") {
  SUBCASE("direct substitution") {
    const std::vector<Point3> t{{0, 0, 0}, {0.4, 0, 0}, {0, 1, 0}};
    const auto s = safety_scale(t, 0.15, 2.0, 1.0);
    CHECK(s.l_min == doctest::Approx(0.4));
    CHECK(s.l_s == doctest::Approx(0.6));
    CHECK(s.radius == doctest::Approx(1.5));
    CHECK(std::abs(min_pairwise_distance(scale_targets(t, s.radius / 1.0)) - s.l_s) < 1e-9);
  }
  SUBCASE("fixed point") {
    const std::vector<Point3> t{{0, 0, 0}, {0.6, 0, 0}, {0, 0.9, 0}};
    CHECK(safety_scale(t, 0.15, 2.0, 1.3).radius == doctest::Approx(1.3));
  }
  SUBCASE("duplicates") {
    const std::vector<Point3> t{{0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS(safety_scale(t, 0.15, 2.0, 1.0), Error);
  }
  SUBCASE("layered targets lift only horizontally") {
    const std::vector<Point3> t{{0, 0, 0}, {0.3, 0, 0}, {0.1, 0.1, 0.5}};
    const auto s = safety_scale(t, 0.15, 2.0, 1.0);
    CHECK(std::abs(min_pairwise_distance(scale_targets(t, s.radius)) - s.l_s) < 1e-9);
  }
}

TEST_CASE("run_paas") {
  PaasConfig cfg;
  cfg.agent_radius = 0.15;
  cfg.margin = 1.5;
  cfg.seed = 5;
  const DvsState dvs{Point3(1, 2, 3), 1.4, 1.0};

  SUBCASE("idempotent when agents sit on their targets") {
    const auto shape = fixtures::frustum();
    std::vector<Point3> agents(12, Point3::Zero());
    for (int i = 0; i < 12; ++i) agents[i] = Point3(0.3 * i, -1.0, 0.0);
    const auto first = run_paas(shape, agents, dvs, cfg);
    std::vector<Point3> on_target(12);
    for (int i = 0; i < 12; ++i)
      on_target[i] = desired_position(dvs, first.relative_targets[first.assignment[i]], first.base_radius);
    const auto second = run_paas(shape, on_target, dvs, cfg);
    CHECK(second.assignment_cost == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(second.relative_targets == first.relative_targets);
    CHECK(second.assignment == first.assignment);
  }
  SUBCASE("deterministic") {
    const auto shape = fixtures::single(fixtures::heart());
    std::vector<Point3> agents;
    for (int i = 0; i < 30; ++i) agents.emplace_back(std::cos(i), std::sin(2 * i), 0.1 * i);
    const auto a = run_paas(shape, agents, dvs, cfg);
    const auto b = run_paas(shape, agents, dvs, cfg);
    CHECK(a.relative_targets == b.relative_targets);
    CHECK(a.assignment == b.assignment);
    CHECK(a.safety_radius == b.safety_radius);
  }
  SUBCASE("frustum 12 to 14 agents respects l_s") {
    const auto shape = fixtures::frustum();
    std::vector<Point3> agents;
    for (int i = 0; i < 14; ++i) agents.emplace_back(0.2 * i, 0.0, 0.0);
    const auto plan = run_paas(shape, agents, dvs, cfg);
    CHECK(plan.layer_counts == std::vector<int>{9, 5});
    const auto scaled = scale_targets(plan.relative_targets, plan.safety_radius / plan.base_radius);
    CHECK(min_pairwise_distance(scaled) >= plan.l_s - 1e-9);
    auto sorted = plan.assignment;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 14; ++i) CHECK(sorted[i] == i);
  }
  SUBCASE("targets lie inside the DVS sphere") {
    const auto shape = fixtures::single(fixtures::pentagram(2.0));
    std::vector<Point3> agents;
    for (int i = 0; i < 25; ++i) agents.emplace_back(0.1 * i, 0.0, 0.0);
    const auto plan = run_paas(shape, agents, dvs, cfg);
    for (const auto& t : plan.relative_targets) CHECK(t.norm() <= plan.base_radius + 1e-12);
  }
  SUBCASE("heart with 100 agents is fast") {
    const auto shape = fixtures::single(fixtures::heart());
    std::vector<Point3> agents;
    for (int i = 0; i < 100; ++i) agents.emplace_back(0.05 * i, std::sin(i), 0.0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto plan = run_paas(shape, agents, dvs, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("PAAS n=100 heart: " << secs << " s");
    CHECK(plan.relative_targets.size() == 100);
    CHECK(secs <= 0.5);
  }
}
