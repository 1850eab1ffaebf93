import time

import numpy as np
import pytest

from msgtransfer.schedule import make_schedule
from msgtransfer.scorefield import TrainConfig, train_denoiser
from msgtransfer.synthdata import generate_clip, suite_specs
from msgtransfer.videocore import SeededRng

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Keep one pass/fail line per acceptance criterion for the summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"acceptance {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture(scope="session")
def schedule():
    return make_schedule()


@pytest.fixture(scope="session")
def suite():
    """Default 200-clip suite in memory: (ids, categories, specs, clips, labels, trajectories)."""
    specs = suite_specs()
    clips, labels, trajs = [], [], []
    for _, _, sp in specs:
        c, t, lab = generate_clip(sp)
        clips.append(c)
        labels.append(lab)
        trajs.append(t)
    return dict(ids=[i for i, _, _ in specs], categories=[c for _, c, _ in specs], specs=[s for _, _, s in specs],
                clips=np.stack(clips), labels=np.array(labels), trajectories=trajs)


@pytest.fixture(scope="session")
def trained(suite, schedule):
    """The toy denoiser trained with the default config (about a minute)."""
    t0 = time.perf_counter()
    net, curve = train_denoiser(suite["clips"], suite["labels"], schedule, TrainConfig(log_every=0), SeededRng(0))
    return dict(net=net, curve=curve, seconds=time.perf_counter() - t0)
