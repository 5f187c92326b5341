# test_subproblem.py

import dataclasses
import math

import numpy as np
import pytest

from conftest import make_params
from driver import initialize
from errors import DomainError, NoConvergence, SubproblemInfeasible
from models import AuxiliaryState, DecisionPoint, SolverSettings, SystemParams, UserParams
from sca import make_linearization
import subproblem
from subproblem import (
    N_, NVAR, P_, START_INTERIOR, T_, TAU_, assemble_p4, point_to_vector, shape_start,
    solve_p4, verify_kkt,
)

BETA = 4e5
F_STAR = math.sqrt(1.0 / (3.0 * BETA * 1e-24 * 1000.0))


def _analytic_case():
    """單用戶、L=0、lambda=1、beta=4e5，展開點 t0=0.45、ptilde0=0"""
    params = SystemParams(B=2e5, T=1.0, p_r=0.1, users=(UserParams(L=0.0, H=1.5, G=1.0),))
    aux = AuxiliaryState.from_arrays(lam=[1.0], beta=[BETA])
    start = DecisionPoint(t=(0.45,), f=(1e7,), m=(0.0,), ptilde=(0.0,), tau=(0.0,), N=(0.0,))
    lin = make_linearization(start)
    return params, aux, lin


def _fig_spec(params=None, cccp=False):
    params = params or make_params()
    start, aux = initialize(params, SolverSettings(cccp_faithful=cccp))
    lin = make_linearization(start)
    return assemble_p4(params, aux, lin, start=start, cccp=cccp)


# ===== 係數 =====

def test_assemble_coefficients_are_finite():
    """參考場景的係數皆為有限值，t 係數與手算一致"""
    spec = _fig_spec()
    for name in ('a_t', 'a_f', 'a_N', 'a_tau', 'a_p', 'c_f3', 'obj_const', 'bits_rhs'):
        assert np.all(np.isfinite(getattr(spec, name))), name

    params = spec.params
    lin = spec.lin
    expected = spec.lam * params.B * (lin.v - lin.theta) - spec.lam * spec.beta * params.p_r
    np.testing.assert_allclose(spec.a_t, expected, rtol=1e-12)


def test_beta_zero_removes_energy_terms():
    params, _, lin = _analytic_case()
    aux = AuxiliaryState.from_arrays(lam=[1.0], beta=[0.0])
    spec = assemble_p4(params, aux, lin)
    assert spec.a_p[0] == 0.0
    assert spec.c_f3[0] == 0.0
    assert spec.a_t[0] == pytest.approx(params.B * (lin.v[0] - lin.theta[0]))


# ===== 求解 =====

def test_solve_p4_analytic_frequency():
    """L=0 時 f* = sqrt(w / (3 beta eps C))"""
    print("\n" + "=" * 60)
    print("測試: 子問題解析解")
    print("=" * 60)

    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    sol = solve_p4(spec)
    print(f"f = {sol.point.f[0]:.6e} Hz (解析 {F_STAR:.6e} Hz)")

    assert F_STAR == pytest.approx(2.8868e7, rel=1e-4)
    assert sol.point.f[0] == pytest.approx(F_STAR, rel=1e-6)
    assert sol.kkt_residual <= 1e-8
    assert sol.feas_residual <= 1e-9
    # transmission costs more than it earns at this beta
    assert sol.point.ptilde[0] < 1e-6


def test_verify_kkt_certifies_solution():
    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    sol = solve_p4(spec)
    report = verify_kkt(spec, sol)
    assert report.stationarity <= 1e-7
    assert report.primal <= 1e-7
    assert report.dual_infeasibility <= 1e-7
    assert report.complementarity <= 1e-7
    # f sits strictly inside its box, so both bound multipliers vanish
    assert report.multipliers['f[0]>=lo'] == 0.0
    assert report.multipliers['f[0]<=hi'] == 0.0


def test_verify_kkt_detects_perturbation():
    """f 偏移 1e-3 f_max 後平穩性殘差變大"""
    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    sol = solve_p4(spec)
    base = verify_kkt(spec, sol).stationarity

    x = sol.x.copy()
    x[1] += 1e-3 * params.users[0].f_max
    moved = dataclasses.replace(sol, x=x)
    assert verify_kkt(spec, moved).stationarity > base


def test_solve_p4_reference_scenario_certified():
    for cccp in (False, True):
        spec = _fig_spec(cccp=cccp)
        sol = solve_p4(spec)
        assert sol.kkt_residual <= 1e-8
        report = verify_kkt(spec, sol)
        assert report.worst <= 1e-7


def test_optimal_N_and_tau_sit_on_their_bounds():
    """N = H ptilde、tau = G ptilde"""
    spec = _fig_spec()
    sol = solve_p4(spec)
    params = spec.params
    pt = sol.point.arr('ptilde')
    H, G, E = params.vector('H'), params.vector('G'), params.vector('E_th')
    np.testing.assert_allclose(sol.point.arr('N'), H * pt, atol=1e-6 * float(np.max(H * E)))
    np.testing.assert_allclose(sol.point.arr('tau'), G * pt, atol=1e-6 * float(np.max(G * E)))


def test_scaling_lambda_scales_objective():
    params = make_params()
    start, aux = initialize(params)
    lin = make_linearization(start)
    spec1 = assemble_p4(params, aux, lin, start=start)
    doubled = AuxiliaryState.from_arrays(lam=2.0 * np.array(aux.lam), beta=aux.beta)
    spec2 = assemble_p4(params, doubled, lin, start=start)

    sol1 = solve_p4(spec1)
    sol2 = solve_p4(spec2)
    assert sol2.objective == pytest.approx(2.0 * sol1.objective, rel=1e-6, abs=1e-6)
    np.testing.assert_allclose(sol2.point.t, sol1.point.t, atol=1e-5)
    np.testing.assert_allclose(sol2.point.ptilde, sol1.point.ptilde, atol=1e-5)
    np.testing.assert_allclose(sol2.point.f, sol1.point.f, rtol=1e-5, atol=1.0)


def test_solution_beats_random_feasible_points():
    """凹極大化: 最優值不低於任何隨機可行點"""
    spec = _fig_spec()
    sol = solve_p4(spec)
    program = spec.to_program()
    params = spec.params
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(2000):
        x = np.zeros(NVAR * params.K)
        for k, u in enumerate(params.users):
            pt = rng.uniform(0.0, u.E_th)
            x[NVAR * k + 0] = rng.uniform(spec.t_floor, params.T / params.K)
            x[NVAR * k + 1] = rng.uniform(0.0, 1.5e8)
            x[NVAR * k + 2] = u.H * pt * rng.uniform(0.0, 1.0)
            x[NVAR * k + 3] = u.G * pt * rng.uniform(1.0, 1.5)
            x[NVAR * k + 4] = pt
        if np.any(program.rows(x) > program.b):
            continue
        checked += 1
        assert spec.objective_value(x) <= sol.objective + 1e-6 * max(1.0, abs(sol.objective))
    assert checked > 0


def test_zero_reward_drives_to_lower_bounds():
    """沒有位元獎勵時所有變數回到下界"""
    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    K = params.K
    idle = dataclasses.replace(
        spec,
        a_f=np.zeros(K), a_N=np.zeros(K), a_tau=np.zeros(K),
        bits_rhs=np.full(K, 1e12),
    )
    sol = solve_p4(idle)
    assert sol.point.t[0] <= spec.t_floor * (1 + 1e-3) + 1e-9
    assert sol.point.f[0] <= 1e-3 * params.users[0].f_max
    assert sol.point.ptilde[0] <= 1e-6


def test_unreachable_task_is_reported_by_phase_one():
    params = make_params(H=(7.0,), G=(1.0,), L=1e9)
    start = DecisionPoint(t=(0.45,), f=(5e7,), m=(0.0,), ptilde=(0.4,), tau=(0.4,), N=(2.8,))
    aux = AuxiliaryState.from_arrays(lam=[1.0], beta=[1e5])
    spec = assemble_p4(params, aux, make_linearization(start), start=start)
    with pytest.raises(SubproblemInfeasible) as info:
        solve_p4(spec)
    assert info.value.violation > 0
    assert info.value.row in spec.to_program().labels


def test_point_to_vector_layout():
    point = DecisionPoint(t=(0.1, 0.2), f=(1.0, 2.0), m=(0.0, 0.0), ptilde=(0.3, 0.4),
                          tau=(0.5, 0.6), N=(0.7, 0.8))
    x = point_to_vector(point)
    assert list(x[:NVAR]) == [0.1, 1.0, 0.7, 0.5, 0.3]
    assert list(x[NVAR:]) == [0.2, 2.0, 0.8, 0.6, 0.4]


# ===== 起始點與容差 =====

def test_shaped_start_sits_inside_the_transform_rows():
    """起始點與 N <= H ptilde、tau >= G ptilde 及時限列保持相對距離"""
    for cccp in (False, True):
        spec = _fig_spec(cccp=cccp)
        params = spec.params
        x = shape_start(spec, spec.x0)
        H, G = params.vector('H'), params.vector('G')
        p = x[P_::NVAR]
        assert np.all(x[N_::NVAR] <= (1 - START_INTERIOR) * H * p * (1 + 1e-12))
        assert np.all(x[TAU_::NVAR] >= (1 + START_INTERIOR) * G * p * (1 - 1e-12))
        assert np.sum(x[T_::NVAR]) <= (1 - START_INTERIOR) * params.T * (1 + 1e-12)
        lo, hi = spec.bounds()
        move = lo < hi
        assert np.all(x[move] > lo[move]) and np.all(x[move] < hi[move])


def test_solve_p4_reference_scenario_reaches_optimum_in_default_mode():
    """兩項皆線性化的子問題也收斂到 KKT 點，且不停在起始點"""
    spec = _fig_spec()
    sol = solve_p4(spec)
    assert sol.kkt_residual <= 1e-8
    assert sol.feas_residual <= 1e-9
    start_value = spec.objective_value(shape_start(spec, spec.x0))
    assert sol.objective > start_value


def test_solve_p4_raises_when_tolerance_is_not_met(monkeypatch):
    """KKT 殘差高於 tol_kkt 時拋出 NoConvergence 並附上最後迭代點"""
    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    original = subproblem.BarrierSolver.solve

    def sloppy(self, x0):
        return dataclasses.replace(original(self, x0), kkt_residual=1e-3)

    monkeypatch.setattr(subproblem.BarrierSolver, 'solve', sloppy)
    with pytest.raises(NoConvergence) as info:
        solve_p4(spec)
    assert isinstance(info.value.best, DecisionPoint)
    assert info.value.best.f[0] == pytest.approx(F_STAR, rel=1e-4)


def test_newton_budget_exhaustion_carries_best_point():
    params, aux, lin = _analytic_case()
    spec = assemble_p4(params, aux, lin)
    with pytest.raises(NoConvergence) as info:
        solve_p4(spec, max_iter=1)
    assert isinstance(info.value.best, DecisionPoint)
    assert info.value.best.K == 1


def test_offload_only_subproblem_is_certified():
    """f 固定為零 (lo == hi) 時兩種模式皆可求解"""
    params = make_params()
    for cccp in (False, True):
        start, aux = initialize(params, SolverSettings(cccp_faithful=cccp), offload_only=True)
        spec = assemble_p4(params, aux, make_linearization(start), start=start,
                           cccp=cccp, offload_only=True)
        sol = solve_p4(spec)
        assert sol.point.f == (0.0, 0.0)
        assert verify_kkt(spec, sol).worst <= 1e-7


# ===== 近端項 =====

def test_prox_weights_follow_entropy_curvature():
    """近端權重為 entropy(N, t) 曲率對角上界的倍數，且在展開點上不影響目標"""
    params = make_params()
    start, aux = initialize(params)
    lin = make_linearization(start)
    plain = assemble_p4(params, aux, lin, start=start)
    prox = assemble_p4(params, aux, lin, start=start, prox_scale=1.0)
    assert plain.prox_t is None

    gain = np.array(aux.lam) * params.B
    s2 = (lin.N0 + lin.t0) ** 2
    np.testing.assert_allclose(prox.prox_N, 2.0 * gain * lin.t0 / s2, rtol=1e-12)
    np.testing.assert_allclose(prox.prox_t, 2.0 * gain * lin.N0**2 / (lin.t0 * s2), rtol=1e-12)

    center = point_to_vector(start)
    assert prox.objective_value(center) == pytest.approx(plain.objective_value(center), rel=1e-12)
    moved = center.copy()
    moved[0] *= 0.9
    assert prox.objective_value(moved) < plain.objective_value(moved)


def test_prox_weights_scale_with_lambda():
    params = make_params()
    start, aux = initialize(params)
    lin = make_linearization(start)
    doubled = AuxiliaryState.from_arrays(lam=2.0 * np.array(aux.lam), beta=aux.beta)
    one = assemble_p4(params, aux, lin, start=start, prox_scale=1.0)
    two = assemble_p4(params, doubled, lin, start=start, prox_scale=1.0)
    np.testing.assert_allclose(two.prox_t, 2.0 * one.prox_t, rtol=1e-12)
    np.testing.assert_allclose(two.prox_N, 2.0 * one.prox_N, rtol=1e-12)


def test_prox_subproblem_is_certified():
    params = make_params()
    start, aux = initialize(params)
    spec = assemble_p4(params, aux, make_linearization(start), start=start, prox_scale=1.0)
    sol = solve_p4(spec)
    assert verify_kkt(spec, sol).worst <= 1e-7


def test_negative_prox_scale_is_rejected():
    params, aux, lin = _analytic_case()
    with pytest.raises(DomainError):
        assemble_p4(params, aux, lin, prox_scale=-1.0)
