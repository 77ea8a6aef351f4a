import json
import socket
import threading
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Callable

import pytest

FEATURES = Path(__file__).resolve().parents[1] / "src" / "bdg" / "features"
_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion's outcome for the terminal summary."""
    results = request.config.stash.setdefault(_CRITERIA, {})

    @contextmanager
    def check(number: int, title: str):
        start = time.perf_counter()
        notes: list[str] = []
        try:
            yield notes
        except BaseException as exc:
            detail = (str(exc).strip().splitlines() or [type(exc).__name__])[0]
            results[number] = (title, "FAIL", f"{type(exc).__name__}: {detail}")
            print(f"FAIL criterion {number}: {title}")
            raise
        results[number] = (title, "PASS", "; ".join(notes) or f"{time.perf_counter() - start:.1f} s")
        print(f"PASS criterion {number}: {title}")

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title} ({detail})")


@pytest.fixture
def features_dir() -> Path:
    return FEATURES


class ScriptedServer:
    """One-connection TCP server whose replies come from a callback.

    ``script(msg)`` returns the raw bytes to send back for each request line,
    or ``None`` to stay silent.
    """

    def __init__(self, script: Callable[[dict], bytes | None]):
        self.script = script
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.address = self.sock.getsockname()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self) -> None:
        try:
            conn, _ = self.sock.accept()
        except OSError:
            return
        with conn:
            buf = b""
            while True:
                try:
                    chunk = conn.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    out = self.script(json.loads(line))
                    if out:
                        try:
                            conn.sendall(out)
                        except OSError:
                            return

    def close(self) -> None:
        self.sock.close()


@pytest.fixture
def scripted():
    servers = []

    def make(script):
        server = ScriptedServer(script)
        servers.append(server)
        return server

    yield make
    for s in servers:
        s.close()


def line(msg: dict) -> bytes:
    return (json.dumps(msg) + "\n").encode()
