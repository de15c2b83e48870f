from __future__ import annotations

import pytest
from hypothesis import strategies as st

from logic_distill.function_base import build_default_base
from logic_distill.grid_world import BoardConfig, GameState, GridPoint, Rect
from logic_distill.retriever import Retriever

SAMPLE_PURSUERS = (GridPoint(3, 8), GridPoint(14, 19), GridPoint(17, 2))
SAMPLE_EVADER = GridPoint(20, 18)
CENTER_AREA = Rect(8, 8, 12, 12)


def make_state(pursuers, evader, **cfg) -> GameState:
    return GameState(
        tuple(GridPoint(*p) for p in pursuers),
        GridPoint(*evader),
        BoardConfig(**cfg),
    )


@pytest.fixture(scope="session")
def base():
    return build_default_base()


@pytest.fixture(scope="session")
def retriever(base):
    return Retriever(base)


@pytest.fixture
def sample_state() -> GameState:
    return GameState(SAMPLE_PURSUERS, SAMPLE_EVADER)


def points(width: int = 21, height: int = 21):
    return st.builds(GridPoint, st.integers(0, width - 1), st.integers(0, height - 1))


@st.composite
def states(draw, restricted: bool = False):
    cfg = BoardConfig(restricted_area=CENTER_AREA if restricted else None)
    free = points().filter(lambda p: not cfg.is_restricted(p))
    ps = tuple(draw(free) for _ in range(3))
    return GameState(ps, draw(free), cfg)


@pytest.fixture
def http_stub():
    """Start a local JSON endpoint whose reply is computed by ``handler(body) -> (status, payload)``."""
    import json
    import threading
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

    servers = []

    def start(handler):
        requests = []

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                requests.append({"body": body, "headers": dict(self.headers)})
                status, payload = handler(body)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        srv = ThreadingHTTPServer(("127.0.0.1", 0), H)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return f"http://127.0.0.1:{srv.server_address[1]}/", requests

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
