"""Blocking client for the sim-service protocol."""

from __future__ import annotations

import json
import socket
import struct
from typing import Any

VERSION = 1


class ServiceClient:
    def __init__(self, host: str = "127.0.0.1", port: int = 7878, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""
        self._seq = 0
        self.snapshots: list[dict] = []

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "ServiceClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def send(self, message: dict) -> None:
        body = json.dumps(message).encode()
        self._sock.sendall(struct.pack(">I", len(body)) + body)

    def receive(self) -> dict:
        while True:
            if len(self._buf) >= 4:
                (n,) = struct.unpack(">I", self._buf[:4])
                if len(self._buf) >= 4 + n:
                    body, self._buf = self._buf[4 : 4 + n], self._buf[4 + n :]
                    return json.loads(body)
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buf += chunk

    def command(self, kind: str, **fields: Any) -> dict:
        """Send one command and return its ack payload.

        Snapshots that arrive first are appended to `self.snapshots`.
        """
        self._seq += 1
        self.send({"v": VERSION, "type": "command", "seq": self._seq, "payload": {"kind": kind, **fields}})
        while True:
            msg = self.receive()
            if msg["type"] == "ack" and msg["payload"].get("command_seq") == self._seq:
                return msg["payload"]
            if msg["type"] == "snapshot":
                self.snapshots.append(msg["payload"])
            elif msg["type"] == "error":
                raise RuntimeError(msg["payload"]["message"])
