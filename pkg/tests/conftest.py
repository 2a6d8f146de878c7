import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aenet_fas.datamodel import Label, SpoofType, generate_synthetic  # noqa: E402
from aenet_fas.scoring import ScoreRecord  # noqa: E402

_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id): exit criterion of the build")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((marker.args[0], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {crit}")


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(12, 10, 0.25, seed=3)


def make_records(scores, is_spoof, types=None, attrs=None):
    out = []
    for i, (s, y) in enumerate(zip(scores, is_spoof)):
        spoof_type = None
        if types is not None:
            spoof_type = types[i]
        elif not y:
            spoof_type = SpoofType.NO_ATTACK
        out.append(
            ScoreRecord(
                image_ref=f"r{i}",
                spoof_score=float(s),
                label=Label.SPOOF if y else Label.LIVE,
                spoof_type=spoof_type,
                face_attributes=None if attrs is None else attrs[i],
            )
        )
    return out


def random_score_set(rng: np.random.Generator, max_n: int = 50, tie_prone: bool = False):
    """Random scores in [0, 1] with both classes present."""
    n = int(rng.integers(2, max_n + 1))
    labels = rng.integers(0, 2, n).astype(bool)
    labels[0], labels[1] = True, False
    if tie_prone:
        scores = rng.integers(0, 6, n) / 5.0
    else:
        scores = rng.random(n)
    return scores.tolist(), labels.tolist()
