"""Engine-driven search against the torch trainer, over the file protocol.

The engine side runs as a subprocess through its CLI (the only coupling is
the graph JSON, the weights container and the request/response handshake).
"""

import json
import subprocess
import sys
import threading
import time

import torch

from torchbridge.containers import write_container, write_graph
from torchbridge.export import export_model
from torchbridge.models import TinyResidual
from torchbridge.serve import serve_trainer

TRIALS = 3


def test_engine_driven_search(tmp_path):
    torch.manual_seed(7)
    exported = export_model(TinyResidual(), torch.zeros(1, 1, 8, 8))
    write_graph(exported.graph, tmp_path / "graph.json")
    write_container(exported.weights, tmp_path / "weights")
    protocol = tmp_path / "protocol"
    protocol.mkdir()

    failures = []

    def serve():
        try:
            serve_trainer(
                protocol,
                TinyResidual,
                dataset_cfg={"samples": 500, "seed": 1},
                trials=TRIALS,
                layer_map=exported.meta["layers"],
                poll_s=0.05,
                timeout_s=240,
            )
        except Exception as exc:  # surfaced after join
            failures.append(exc)

    server = threading.Thread(target=serve, daemon=True)
    server.start()

    start = time.monotonic()
    proc = subprocess.run(
        [
            sys.executable, "-m", "chansearch.cli", "search",
            str(tmp_path / "graph.json"),
            "--weights", str(tmp_path / "weights"),
            "--algorithm", "greedy", "--gamma", "0",
            "--trials", str(TRIALS), "--epochs", "1", "--seed", "5",
            "--trainer", f"external:{protocol}",
            "--timeout", "240",
            "--out", str(tmp_path / "run"),
        ],
        capture_output=True, text=True, timeout=280,
    )
    elapsed = time.monotonic() - start
    server.join(timeout=30)

    assert proc.returncode == 0, proc.stderr
    assert not failures, failures
    assert elapsed < 300.0, f"integration run took {elapsed:.0f}s"

    result = json.loads((tmp_path / "run" / "search_result.json").read_text())
    assert len(result["trials"]) == TRIALS
    assert all(r["train_acc"] >= 0.0 for r in result["trials"])
    # the engine really drove this server: every trial dir has a response
    for t in range(1, TRIALS + 1):
        assert (protocol / f"trial_{t}" / "response.json").is_file()
