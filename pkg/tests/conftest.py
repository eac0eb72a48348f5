import numpy as np
import pytest

from gntransport.lattice import (GeometrySpec, LatticeParams,
                                 build_constriction, build_ribbon)


@pytest.fixture(scope="session")
def params_s8():
    return LatticeParams(scaling=8.0)


@pytest.fixture(scope="session")
def armchair_ribbon(params_s8):
    """Small metallic armchair ribbon, W ~ 30 nm."""
    return build_ribbon(params_s8, "armchair", 30.0, 40.0,
                        metallic_snap=True)


@pytest.fixture(scope="session")
def zigzag_ribbon(params_s8):
    return build_ribbon(params_s8, "zigzag", 30.0, 40.0)


@pytest.fixture(scope="session")
def small_constriction(params_s8):
    geo = GeometrySpec(edge_type="armchair", lead_width_nm=60.0,
                       constriction_width_nm=30.0,
                       constriction_length_nm=20.0,
                       profile="smooth-cosine", total_length_nm=80.0)
    return build_constriction(params_s8, geo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
