import numpy as np
import pytest

from attnocr.dataset import GenSpec, generate
from attnocr.model import ModelConfig

TINY_SPEC = dict(charset="ABCD", min_len=1, max_len=3, views=2, view_size=(16, 32), clutter=0.0)


@pytest.fixture(scope="session")
def tiny_ds(tmp_path_factory):
    """40 two-view 16x32 samples over a 4-letter charset."""
    out = tmp_path_factory.mktemp("tiny_ds")
    generate(GenSpec(**TINY_SPEC), 40, 0, str(out))
    return str(out)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(max_len=4, views=2, view_size=(16, 32), preset="tiny-2", lstm_width=16, attn_width=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one PASS/FAIL line per criterion-marked test

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = getattr(item, "criterion_detail", "")
        if rep.failed:
            msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else "failed"
            detail = (detail + " | " if detail else "") + msg.splitlines()[0][:200]
        _CRITERIA[name] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _CRITERIA.items():
        terminalreporter.write_line(f"{status} {name}" + (f" ({detail})" if detail else ""))
