import math

import numpy as np
import pytest

from ltfeas import _kernels_py, kernels
from ltfeas.astro import ClassicalElements

try:
    from ltfeas import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ["python"] + (["compiled"] if _compiled is not None else [])
_NAMES = ("stumpff", "propagate", "lambert", "sft_defect", "sft_jacobian")


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    impl = _kernels_py if request.param == "python" else _compiled
    for name in _NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    monkeypatch.setattr(kernels, "BACKEND", impl.BACKEND)
    return impl


def random_elements(rng, a=(0.5, 5.0), e=(0.0, 0.9), i=(0.0, math.pi)):
    return ClassicalElements(
        a=float(rng.uniform(*a)),
        e=float(rng.uniform(*e)),
        i=float(rng.uniform(*i)),
        raan=float(rng.uniform(0, 2 * math.pi)),
        argp=float(rng.uniform(0, 2 * math.pi)),
        nu=float(rng.uniform(0, 2 * math.pi)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def planted_problem():
    """Mixed space with a known interior optimum; objective is minus the squared encoded distance."""
    from ltfeas.hyperopt import Categorical, Continuous, SearchSpace

    space = SearchSpace([Continuous("a", 0.0, 1.0), Continuous("b", 1.0, 2.0),
                         Categorical("c", ("x", "y", "z"))])
    target = space.encode({"a": 0.3, "b": 1.5, "c": "y"})

    def objective(cfg):
        d = space.encode(cfg) - target
        return -float(d @ d)

    return space, target, objective


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
