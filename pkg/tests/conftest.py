import time
from dataclasses import dataclass

import numpy as np
import pytest

from s4dm.gridmath import RandomStream
from s4dm.speckle import SpeckleConfig, apply_speckle, make_synthetic_targets
from s4dm.training import TrainConfig, TrainState, train
from s4dm.transform import TransformSpec, fit_lambda, to_z_domain

LOOKS = 4.0
N_TRAIN = 16

_acceptance_lines: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance criterion outcome, then assert it."""
    def _record(number: int, title: str, ok: bool, detail: str) -> None:
        _acceptance_lines.append(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@dataclass
class DeskRun:
    spec: TransformSpec
    cfg: TrainConfig
    state: TrainState
    clean: np.ndarray    # held-out clean target
    noisy: np.ndarray    # its speckled observation
    seconds: float       # fit + training wall time


@pytest.fixture(scope="session")
def desk_run() -> DeskRun:
    """Default-config training on speckled piecewise-constant 64x64 scenes (L = 4)."""
    t0 = time.perf_counter()
    scenes = [make_synthetic_targets("piecewise-constant", 64, seed=s).image for s in range(N_TRAIN + 1)]
    noisy = [apply_speckle(c, SpeckleConfig(LOOKS, 100 + s)) for s, c in enumerate(scenes)]
    train_noisy = noisy[:N_TRAIN]
    anchor = float(np.mean([np.log(x).mean() for x in train_noisy]))
    spec = fit_lambda(LOOKS, anchor, RandomStream(0), n=1_000_000)
    cfg = TrainConfig(sigma_data=spec.sigma_data, seed=0)
    state = train([to_z_domain(x, spec) for x in train_noisy], cfg)
    return DeskRun(spec, cfg, state, scenes[N_TRAIN], noisy[N_TRAIN], time.perf_counter() - t0)
