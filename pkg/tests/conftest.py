import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_kernel():
    """Gaussian kernel on 10 points spread along a line."""
    from hotspot_tensor import gaussian_kernel_basis

    x = np.linspace(0.0, 9.0, 10)
    return gaussian_kernel_basis(np.abs(x[:, None] - x[None, :]), 2.0)


SMOKE_HOT = tuple((i, w) for i in (2, 7) for w in (1, 2, 3, 11, 12))


@pytest.fixture(scope="session")
def smoke_cfg():
    from hotspot_tensor.simlab import SimConfig

    return SimConfig(n1=10, n2=12, T=30, tau=15, delta=0.5, sigma=0.1, hot_cells=SMOKE_HOT)


@pytest.fixture(scope="session")
def smoke_ssr(smoke_cfg):
    """SSR method calibrated once on the small configuration."""
    from hotspot_tensor.simlab import SSRMethod

    return SSRMethod(calibration_reps=300).calibrate(smoke_cfg, 11)
