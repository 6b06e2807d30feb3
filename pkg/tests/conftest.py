import numpy as np
import pytest

from meshfree.adapt import OrderField
from meshfree.nodegen import DomainShape, SpacingField, fill_domain
from meshfree.problems import peak_problem


@pytest.fixture
def disc():
    return DomainShape.disc()


@pytest.fixture
def square():
    return DomainShape.rectangle((0.0, 0.0), (1.0, 1.0))


@pytest.fixture
def cube():
    return DomainShape.box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smooth_peak():
    """Peak problem with a weak source, resolvable on coarse clouds."""
    return peak_problem(a_strength=5.0)


@pytest.fixture
def make_nodes():
    """Prepared uniform cloud for a problem at spacing h and order m."""
    def build(problem, h: float, m: int = 2, seed: int = 0):
        d = problem.dimension
        return problem.prepare(fill_domain(problem.shape, SpacingField.constant(h, d), seed,
                                           order=OrderField.constant(m, d, allowed=[m])))
    return build


@pytest.fixture
def runs_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HPADAPT_RUNS_DIR", str(tmp_path))
    return tmp_path
