"""Newline-delimited JSON client for external model backends.

An endpoint is either ``tcp://host:port`` or a shell-style command line that
is spawned as a child process speaking the protocol on stdin/stdout. Each
request is one JSON object per line and gets exactly one JSON line back.
Requests carry an ``id``; replies echoing a stale ``id`` are discarded so a
reply that arrives after a timeout cannot be mistaken for the next one.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import socket
import subprocess
import threading

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class BackendError(RuntimeError):
    pass


class BackendTimeout(BackendError):
    pass


def parse_backend(spec: str | None) -> str | None:
    """``oracle`` -> None; ``external:<endpoint>`` -> endpoint."""
    if spec is None or spec == "oracle":
        return None
    if spec.startswith("external:"):
        endpoint = spec[len("external:"):].strip()
        if not endpoint:
            raise ValueError("external backend needs an endpoint")
        if endpoint.startswith("tcp://"):
            host, _, port = endpoint[6:].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp endpoint {endpoint!r}")
        return endpoint
    raise ValueError(f"backend must be 'oracle' or 'external:<endpoint>', got {spec!r}")


class JsonLineClient:
    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout
        self._proc = None
        self._sock = None
        self._wfile = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0
        self._dead = None

    def _reader(self, rfile):
        try:
            for line in rfile:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def _connect(self):
        if self._wfile is not None:
            return
        try:
            if self.endpoint.startswith("tcp://"):
                host, _, port = self.endpoint[6:].rpartition(":")
                self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
                self._sock.settimeout(None)
                rfile = self._sock.makefile("r", encoding="utf-8")
                self._wfile = self._sock.makefile("w", encoding="utf-8")
            else:
                self._proc = subprocess.Popen(
                    shlex.split(self.endpoint), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, encoding="utf-8", bufsize=1,
                )
                rfile, self._wfile = self._proc.stdout, self._proc.stdin
        except OSError as exc:
            self._dead = f"cannot reach {self.endpoint!r}: {exc}"
            raise BackendError(self._dead) from exc
        threading.Thread(target=self._reader, args=(rfile,), daemon=True).start()

    def request(self, payload: dict) -> dict:
        if self._dead:
            raise BackendError(self._dead)
        self._connect()
        self._next_id += 1
        rid = self._next_id
        msg = dict(payload, id=rid)
        try:
            self._wfile.write(json.dumps(msg, sort_keys=True) + "\n")
            self._wfile.flush()
        except (OSError, ValueError) as exc:
            self._dead = f"backend {self.endpoint!r} closed: {exc}"
            raise BackendError(self._dead) from exc
        while True:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise BackendTimeout(f"no reply from {self.endpoint!r} within {self.timeout}s") from None
            if line is None:
                self._dead = f"backend {self.endpoint!r} closed the stream"
                raise BackendError(self._dead)
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BackendError(f"malformed reply {line!r}") from exc
            if not isinstance(reply, dict):
                raise BackendError(f"reply is not an object: {line!r}")
            if reply.get("id", rid) != rid:
                log.debug("discarding stale reply %r", reply)
                continue
            return reply

    def close(self):
        for f in (self._wfile,):
            try:
                if f is not None:
                    f.close()
            except OSError:
                pass
        if self._sock is not None:
            # the reader thread still holds a makefile; shutdown forces EOF on both ends
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
        if self._proc is not None:
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._wfile = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
