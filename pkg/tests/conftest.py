"""Shared fixtures for the acceptance suite.

The two desk-scale training runs dominate the suite runtime, so they are
session-scoped and produced through the CLI (which also exercises the
train command end to end). Setting GAITLAB_TEST_CACHE=1 reuses run
directories across sessions during development; leave it unset for an
honest from-scratch run.
"""

import os
import shutil
from pathlib import Path

import pytest

from gaitlab.cli import main as cli_main

CACHE = os.environ.get("GAITLAB_TEST_CACHE", "") == "1"
CACHE_DIR = Path(__file__).parent / ".cache"

WALK_DESK_ITERATIONS = 600
WALK_DESK_SEED = 3


def _train_run(tag: str, extra_args: list[str], tmp_root: Path) -> str:
    cached = CACHE_DIR / tag
    if CACHE and (cached / "final.ckpt").exists():
        return str(cached)
    out = (cached if CACHE else tmp_root / tag)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists():
        shutil.rmtree(out)
    rc = cli_main(["train", "--preset", "walk-desk",
                   "--iterations", str(WALK_DESK_ITERATIONS),
                   "--seed", str(WALK_DESK_SEED),
                   "--out", str(out), "--quiet", *extra_args])
    assert rc == 0, f"training run {tag} failed"
    return str(out)


@pytest.fixture(scope="session")
def walk_run(tmp_path_factory):
    """Desk-scale phase-1 + phase-2 run on the walk-desk preset."""
    root = tmp_path_factory.mktemp("acceptance")
    return _train_run(f"walk-it{WALK_DESK_ITERATIONS}-seed{WALK_DESK_SEED}",
                      ["--phase2"], root)


@pytest.fixture(scope="session")
def noenergy_run(tmp_path_factory):
    """Paired ablation: identical config and seed with alpha_1 = 0."""
    root = tmp_path_factory.mktemp("acceptance_noenergy")
    return _train_run(
        f"noenergy-it{WALK_DESK_ITERATIONS}-seed{WALK_DESK_SEED}",
        ["--no-energy"], root)
