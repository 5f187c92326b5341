# conftest.py

import pytest

from models import SolverSettings, SystemParams, Tolerances, UserParams


def make_params(L=5e4, H=(7.0, 5.0), G=(1.0, 1.0), p_r=0.1, **user_kw) -> SystemParams:
    """雙用戶參考場景: B=200 kHz、T=1 s、C=1000、eps=1e-24、f_max=1 GHz、E_th=1 J"""
    Ls = L if isinstance(L, (tuple, list)) else (L,) * len(H)
    users = tuple(UserParams(L=l, H=h, G=g, **user_kw) for l, h, g in zip(Ls, H, G))
    return SystemParams(B=2e5, T=1.0, p_r=p_r, users=users)


@pytest.fixture
def fig_params() -> SystemParams:
    return make_params()


@pytest.fixture
def single_user() -> SystemParams:
    return make_params(H=(7.0,), G=(1.0,))


@pytest.fixture
def cccp_settings() -> SolverSettings:
    return SolverSettings(cccp_faithful=True)


@pytest.fixture
def tolerances() -> Tolerances:
    return Tolerances()
