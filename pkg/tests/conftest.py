import numpy as np
import pytest

from deeplinear.experiments import gen_separable_blobs, gen_two_circles
from deeplinear.geometry import svm_solve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    data, _ = gen_separable_blobs(20, 3, 0.2, seed=0)
    return data


@pytest.fixture(scope="session")
def blobs_cert(blobs):
    return svm_solve(blobs)


@pytest.fixture(scope="session")
def circles():
    return gen_two_circles(24, 1.0, seed=0)


# Acceptance outcomes, keyed by criterion number: list of (label, ok, detail).
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion: int, label: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
        print(f"criterion {criterion} [{label}]: {'PASS' if ok else 'FAIL'} ({detail})")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{label}: {'ok' if ok else 'failed'}, {d}" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
