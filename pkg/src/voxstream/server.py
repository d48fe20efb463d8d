"""Read-only HTTP service for bundled assets.

Serves the manifest URL space with single-range byte-range support so a
player can fetch individual group chunks; responses are immutable-cacheable
and CORS-enabled for browser viewers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

_ROUTE = re.compile(r"^/(manifest\.json|mlp\.json|gof/(\d+)/(stream|mapping\.png|occupancy\.bin))$")

_CONTENT_TYPES = {
    ".json": "application/json",
    ".png": "image/png",
}


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    root: str = "."
    cors: bool = True
    cache_max_age: int = 31536000
    quiet: bool = True

    def __post_init__(self):
        if not (0 <= self.port < 65536):
            raise ValueError(f"port {self.port} out of range")


class _RangeError(ValueError):
    pass


def parse_range(header: str, size: int) -> tuple[int, int]:
    """First/last byte of a single-range header, or _RangeError if unusable."""
    m = re.fullmatch(r"bytes=(\d*)-(\d*)", header.strip())
    if not m or (not m.group(1) and not m.group(2)):
        raise _RangeError(f"malformed range {header!r}")
    start_s, end_s = m.groups()
    if not start_s:  # suffix form: last N bytes
        n = int(end_s)
        if n == 0:
            raise _RangeError("zero-length suffix range")
        start = max(size - n, 0)
        end = size - 1
    else:
        start = int(start_s)
        end = int(end_s) if end_s else size - 1
        if end < start:
            raise _RangeError(f"inverted range {header!r}")
        end = min(end, size - 1)
    if start >= size:
        raise _RangeError(f"range start {start} beyond size {size}")
    return start, end


class AssetHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    config: ServeConfig  # set by make_server on the subclass

    def log_message(self, fmt, *args):
        if not self.config.quiet:
            super().log_message(fmt, *args)

    def _cors_headers(self):
        if self.config.cors:
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, HEAD, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Range")
            self.send_header("Access-Control-Expose-Headers",
                             "Content-Range, Accept-Ranges, Content-Length")

    def _fail(self, code: int, message: str, extra: dict | None = None):
        body = (message + "\n").encode()
        self.send_response(code)
        self._cors_headers()
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _resolve(self) -> Path | None:
        m = _ROUTE.fullmatch(self.path.split("?", 1)[0])
        if not m:
            return None
        path = Path(self.config.root) / m.group(1)
        return path if path.is_file() else None

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors_headers()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_HEAD(self):
        self._serve(head=True)

    def do_GET(self):
        self._serve(head=False)

    def _serve(self, head: bool):
        path = self._resolve()
        if path is None:
            self._fail(404, f"not found: {self.path}")
            return
        data = path.read_bytes()
        size = len(data)
        rng = self.headers.get("Range")
        status, start, end = 200, 0, size - 1
        if rng is not None:
            try:
                start, end = parse_range(rng, size)
                status = 206
            except _RangeError as err:
                self._fail(416, str(err), {"Content-Range": f"bytes */{size}"})
                return
        chunk = data[start : end + 1]
        self.send_response(status)
        self._cors_headers()
        ctype = _CONTENT_TYPES.get(path.suffix, "application/octet-stream")
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(chunk)))
        self.send_header("Accept-Ranges", "bytes")
        self.send_header("Cache-Control",
                         f"public, max-age={self.config.cache_max_age}, immutable")
        if status == 206:
            self.send_header("Content-Range", f"bytes {start}-{end}/{size}")
        self.end_headers()
        if not head:
            self.wfile.write(chunk)


def make_server(config: ServeConfig) -> ThreadingHTTPServer:
    root = Path(config.root)
    if not root.is_dir():
        raise ValueError(f"asset root {root} is not a directory")
    handler = type("BoundAssetHandler", (AssetHandler,), {"config": config})
    return ThreadingHTTPServer((config.host, config.port), handler)


def serve(config: ServeConfig) -> None:
    httpd = make_server(config)
    host, port = httpd.server_address[:2]
    print(f"serving {Path(config.root).resolve()} at http://{host}:{port}/")
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
