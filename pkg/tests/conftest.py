import numpy as np
import pytest

from maxent_source.numcore import RngStream, max_rel_error


def assert_grad_close(analytic, numeric, rtol=1e-4, floor=1e-6):
    """Entrywise relative check; ``floor`` keeps near-zero entries from dominating."""
    err = max_rel_error(analytic, numeric, floor=floor)
    assert err <= rtol, f"max relative error {err:.3e} > {rtol}"


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sir_surrogate_50k():
    """The 50k-pair SIR surrogate, trained once and shared across modules."""
    from maxent_source.simulators import get_task
    from maxent_source.surrogate import SurrogateSpec, train_surrogate

    return train_surrogate(get_task("sir"), 50_000, SurrogateSpec(), RngStream(0))
