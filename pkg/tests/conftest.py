import numpy as np
import pytest
from hypothesis import settings

from cgvae import autodiff as ad

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def central_difference(f, x, h=1e-5):
    """Independent gradient oracle: perturb each entry of ``x`` in place."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def tape_grad(build, *arrays):
    """Gradients of a scalar ``build(*tensors)`` with respect to each input array."""
    with ad.fresh_tape():
        leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
        ad.backward(build(*leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _criteria.get(number, (title, True, ""))
        detail = dict(item.user_properties).get("measured", prev[2])
        _criteria[number] = (title, prev[1] and not failed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, detail = _criteria[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
