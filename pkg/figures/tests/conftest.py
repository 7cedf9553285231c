"""Golden fixture directories, produced by the simulator CLI.

The figures package consumes the simulator only through its files, so the
fixtures here shell out to `python3 -m lineagesim` rather than importing it.
"""
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

SIMULATOR_SRC = Path(__file__).resolve().parents[2] / "src"


def run_simulator(*args):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(SIMULATOR_SRC) + os.pathsep + env.get("PYTHONPATH", "")
    proc = subprocess.run([sys.executable, "-m", "lineagesim", *args],
                          env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"lineagesim {' '.join(args)} failed:\n{proc.stderr}")
    return proc


@pytest.fixture(scope="session")
def dd_trace(tmp_path_factory):
    """Disruptive-competition demo trace: survives with several families."""
    out = tmp_path_factory.mktemp("dd")
    run_simulator("simulate", "--scenario", "dieckmann-doebeli", "--n", "300",
                  "--horizon", "0.5", "--seed", "1", "--out", str(out))
    return out


@pytest.fixture(scope="session")
def adler_trace(tmp_path_factory):
    """Delayed-memory demo trace."""
    out = tmp_path_factory.mktemp("adler")
    run_simulator("simulate", "--scenario", "adler-goats", "--seed", "4",
                  "--out", str(out))
    return out


@pytest.fixture(scope="session")
def fk_dir(tmp_path_factory):
    """Batch summary plus a matching mass-law estimator report in one place."""
    out = tmp_path_factory.mktemp("fkcmp")
    run_simulator("replicates", "--scenario", "neutral", "--n", "50",
                  "--seed", "9", "--replicates", "40", "--grid", "0.25",
                  "--out", str(out))
    run_simulator("fk", "--mode", "feller", "--gamma-bar", "0.0",
                  "--t", "1.0", "--grid", "0.25", "--paths", "20000",
                  "--seed", "12", "--out", str(out))
    return out


def write_single_founder(dirpath: Path, trait=0.7, horizon=1.0) -> Path:
    """Hand-written minimal trace: one founder, no events, alive at T."""
    dirpath.mkdir(parents=True, exist_ok=True)
    (dirpath / "forest.jsonl").write_text(json.dumps(
        {"id": 0, "parent": -1, "birth": 0.0, "death": None,
         "trait": [trait], "mutant": False}) + "\n")
    (dirpath / "summary.json").write_text(json.dumps(
        {"label": "single", "n": 1, "horizon": horizon, "replicate": 0,
         "seed": 0, "events": 0, "final_time": horizon, "final_count": 1,
         "final_mass": 1.0, "extinct": False, "exploded": False}) + "\n")
    (dirpath / "mass.csv").write_text("time,count,mass\n0,1,1\n")
    return dirpath
