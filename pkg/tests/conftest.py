import numpy as np
import pytest

from clinaudit.data import Dataset, SyntheticSpec, gen_synthetic

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}

# fixed desk-scale task shared by the directional experiments
TASK_WEIGHTS = tuple(np.random.default_rng(123).normal(size=10) * 0.5)


def task_dataset(n: int, seed: int) -> Dataset:
    return gen_synthetic(SyntheticSpec(n=n, true_weights=TASK_WEIGHTS, seed=seed))


@pytest.fixture
def small_ds():
    return gen_synthetic(SyntheticSpec(n=200, true_weights=(1.0, -0.5, 0.8), intercept=-0.3, seed=1))


@pytest.fixture
def grouped_ds():
    return gen_synthetic(SyntheticSpec(n=400, true_weights=(1.0, -0.5), group_logit_shift=(0.0, -1.0), seed=2))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
