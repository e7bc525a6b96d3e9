import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from exprbench.data import CLASS_NAMES, write_pgm
from exprbench.synthetic import fer_csv_text, toy_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_class_dir(root, n=14, seed=0, name="faces"):
    """Synthetic faces laid out as ``root/<class>/<id>.pgm``."""
    ds = toy_dataset(n, seed=seed, name=name)
    for s in ds.samples:
        d = root / CLASS_NAMES[s.label]
        d.mkdir(parents=True, exist_ok=True)
        write_pgm(d / f"{s.source_id}.pgm", s.image)
    return root


@pytest.fixture
def fer_csv(tmp_path):
    path = tmp_path / "fer.csv"
    path.write_text(fer_csv_text(42, seed=3))
    return path


@pytest.fixture
def class_dir(tmp_path):
    return write_class_dir(tmp_path / "faces")


def pytest_report_header(config):
    from exprbench import kernels

    return f"exprbench kernel backend: {kernels.BACKEND} (EXPRBENCH_BACKEND={os.environ.get('EXPRBENCH_BACKEND', 'auto')})"


_criteria: dict[int, tuple[str, bool]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    report = outcome.get_result()
    if mark is None or (report.when != "call" and not report.failed):
        return
    n, text = mark.args
    prev = _criteria.get(n, (text, True))[1]
    _criteria[n] = (text, prev and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, ok = _criteria[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
