import pytest

from rcnet.config import NeckConfig, desk_config


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_config()


@pytest.fixture(scope="session")
def mini_cfg():
    """Smaller than desk so neck-level tests stay fast."""
    return NeckConfig(
        l_min=3,
        l_max=7,
        d=16,
        backbone_channels=(8, 12, 16),
        r=2,
        k=4,
        batch=1,
        base_resolution=(32, 32),
        seed=11,
    )
