"""Reward service: newline-delimited JSON over a stream socket (or stdio).

Each request line carries a query and a completion; the response echoes the
request id with the binary reward and classification.  Malformed requests
get an error object and the connection stays open.  Verification state is
immutable except the distance-field cache, which is bounded, thread-safe,
and transparent: cache-on and cache-off responses are byte-identical.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import sys
import threading
from collections import OrderedDict

import numpy as np

from .gridmap import GridMap, MapRegistry, NodeId
from .pathfind import PathQuery, distance_field
from .verifier import verify_completion

log = logging.getLogger(__name__)

REQUEST_FIELDS = ("id", "map_id", "start_token", "end_token", "completion")


class DistanceCache:
    """Bounded LRU of per-(map, source) distance fields; rollout batches reuse sources."""

    def __init__(self, maxsize: int = 4096, enabled: bool = True):
        self.maxsize = maxsize
        self.enabled = enabled
        self._lock = threading.Lock()
        self._fields: OrderedDict[tuple[str, int], np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def lookup(self, grid: GridMap, start: NodeId) -> np.ndarray:
        if not self.enabled:
            return distance_field(grid, start)
        key = (grid.map_id, start.uid)
        with self._lock:
            field = self._fields.get(key)
            if field is not None:
                self._fields.move_to_end(key)
                self.hits += 1
                return field
            self.misses += 1
        field = distance_field(grid, start)
        with self._lock:
            self._fields[key] = field
            if len(self._fields) > self.maxsize:
                self._fields.popitem(last=False)
        return field


class RewardService:
    """Stateless request handler around a registry and a distance cache."""

    def __init__(self, registry: MapRegistry, cache: DistanceCache | None = None):
        self.registry = registry
        self.cache = cache if cache is not None else DistanceCache()

    def handle(self, request: dict) -> dict:
        req_id = request.get("id", "?")
        for field in REQUEST_FIELDS:
            if field not in request:
                return {"id": req_id, "error": f"missing field {field!r}"}
        map_id = request["map_id"]
        if map_id not in self.registry:
            return {"id": req_id, "error": f"unknown map {map_id!r}"}
        grid = self.registry.map_by_id(map_id)
        try:
            start = grid.node_by_token(request["start_token"])
            end = grid.node_by_token(request["end_token"])
            query = PathQuery(map_id, start, end)
        except Exception as exc:
            return {"id": req_id, "error": str(exc)}
        result = verify_completion(
            grid, query, request["completion"], dist_lookup=self.cache.lookup
        )
        return {
            "id": req_id,
            "reward": result.reward,
            "class": result.outcome.value,
            "gen_len": result.generated_length,
            "shortest_len": result.shortest_length,
        }

    def handle_line(self, line: str) -> str:
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except Exception as exc:
            return json.dumps({"id": "?", "error": f"bad request line: {exc}"}, separators=(",", ":"))
        return json.dumps(self.handle(request), separators=(",", ":"))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: RewardService = self.server.service  # type: ignore[attr-defined]
        while True:
            raw = self.rfile.readline()
            if not raw:
                return
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((service.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class RewardServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, registry: MapRegistry, host: str = "127.0.0.1", port: int = 0,
                 cache: DistanceCache | None = None):
        super().__init__((host, port), _Handler)
        self.service = RewardService(registry, cache)

    @property
    def address(self) -> tuple[str, int]:
        return self.socket.getsockname()[:2]


def serve_tcp(registry: MapRegistry, host: str, port: int,
              cache: DistanceCache | None = None) -> None:
    """Run the socket service until interrupted."""
    with RewardServer(registry, host, port, cache) as server:
        log.info("reward service listening on %s:%d", *server.address)
        server.serve_forever()


def serve_stdio(registry: MapRegistry, cache: DistanceCache | None = None,
                stdin=None, stdout=None) -> None:
    """Identical protocol over stdin/stdout, one JSON object per line."""
    service = RewardService(registry, cache)
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(service.handle_line(line) + "\n")
        stdout.flush()


class RewardClient:
    """Blocking NDJSON client for the reward socket (used by trainers and tests)."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        self._lock = threading.Lock()

    def request(self, payload: dict) -> dict:
        with self._lock:
            self._file.write((json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8"))
            self._file.flush()
            raw = self._file.readline()
        if not raw:
            raise ConnectionError("reward service closed the connection")
        return json.loads(raw.decode("utf-8"))

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RewardClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
