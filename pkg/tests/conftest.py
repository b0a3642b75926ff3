from __future__ import annotations

import json
import socket
import threading
import time
import urllib.request
from pathlib import Path

import pytest
import uvicorn

from loopstage.config import ExperimentDef, load_experiment
from loopstage.server import ServerConfig, build_app

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "src" / "loopstage" / "fixtures"
DOCS_DIR = Path(__file__).resolve().parent.parent / "docs"


def free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


class ServerHandle:
    """A loopstage server running on a real socket in a background thread."""

    def __init__(self, experiment: ExperimentDef, log_dir: Path, base_seed: int = 0):
        self.port = free_port()
        self.log_dir = log_dir
        self.config = ServerConfig(experiment=experiment, log_dir=log_dir,
                                   base_seed=base_seed)
        self.app = build_app(self.config)
        self._server = uvicorn.Server(uvicorn.Config(
            self.app, host="127.0.0.1", port=self.port, log_level="error"))
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def ws_base(self) -> str:
        return f"ws://127.0.0.1:{self.port}"

    def start(self) -> "ServerHandle":
        self._thread.start()
        deadline = time.time() + 10
        while time.time() < deadline:
            try:
                urllib.request.urlopen(f"{self.base_url}/healthz", timeout=0.2)
                return self
            except Exception:
                time.sleep(0.05)
        raise RuntimeError("server did not come up")

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)

    def post(self, path: str, body: dict) -> dict:
        req = urllib.request.Request(f"{self.base_url}{path}",
                                     data=json.dumps(body).encode(),
                                     headers={"Content-Type": "application/json"})
        return json.loads(urllib.request.urlopen(req).read())

    def get(self, path: str) -> dict:
        return json.loads(urllib.request.urlopen(f"{self.base_url}{path}").read())

    def create_session(self, seed: int, condition: str = "headless") -> str:
        return self.post("/admin/sessions", {"seed": seed, "condition": condition})["session_id"]

    def log_path(self, session_id: str) -> Path:
        return self.log_dir / f"{session_id}.jsonl"


@pytest.fixture
def server_factory(tmp_path):
    handles = []

    def start(fixture_name: str, base_seed: int = 0) -> ServerHandle:
        experiment = load_experiment(FIXTURE_DIR / f"{fixture_name}.toml")
        handle = ServerHandle(experiment, tmp_path / fixture_name, base_seed=base_seed)
        handles.append(handle)
        return handle.start()

    yield start
    for handle in handles:
        handle.stop()
