# driver.py

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import InfeasibleInstance, NoConvergence, StallError, SubproblemInfeasible
from fractional import damped_aux_update, residual_from_terms
from models import (
    AuxiliaryState, DecisionPoint, InnerTraceEntry, LocalOnlyResult, OracleGrid,
    OracleResult, OuterTraceEntry, SolveReport, SolverSettings, SystemParams,
    Termination, Tolerances, UserParams, UserReport,
)
from sca import make_linearization
from subproblem import assemble_p4, point_to_vector, solve_p4
from system_model import (
    ce_objective, check_feasibility, offloaded_bits, ratio_terms, secrecy_bits_array,
)

logger = logging.getLogger(__name__)

MAX_BITS_GRID = 400
START_MARGIN = 1e-6


def effective_bandwidth(params: SystemParams, settings: SolverSettings) -> float:
    """有效頻寬: B，以 2 為底回報位元時為 B/ln 2"""
    return params.B / math.log(2) if settings.log2_rates else params.B


# ===== 可達位元數 =====

def _best_bits_at_time(u: UserParams, t: np.ndarray, params: SystemParams, B: float,
                       offload_only: bool = False, n: int = MAX_BITS_GRID):
    """
    每個卸載時間在能量預算內可達的最大位元數

    掃描本地頻率，剩餘預算全部用於傳輸能量。

    Returns:
        (bits, f, ptilde)，形狀與 t 相同
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    spare = u.E_th - params.p_r * t
    f_top = min(u.f_max, (u.E_th / (u.eps * params.T)) ** (1.0 / 3.0))
    f = np.zeros(1) if offload_only else np.linspace(0.0, f_top, n)
    ff = f[None, :]
    pt = np.maximum(0.0, spare[:, None] - u.eps * ff**3 * params.T)
    local_ok = u.eps * ff**3 * params.T <= spare[:, None]
    sec = np.where(spare[:, None] > 0, secrecy_bits_array(t[:, None], pt, u.H, u.G, B), 0.0)
    bits = np.where(local_ok, sec + params.T * ff / u.C, -np.inf)
    best = np.argmax(bits, axis=1)
    rows = np.arange(len(t))
    return bits[rows, best], f[best], pt[rows, best]


def max_achievable_bits(u: UserParams, params: SystemParams, B: Optional[float] = None,
                        t_max: Optional[float] = None, offload_only: bool = False) -> float:
    """
    InfeasibleInstance 的憑證: 單一用戶獨佔 T (或 t_max) 時，
    在能量預算內於細格點上可完成的最大位元數
    """
    bw = params.B if B is None else B
    top = params.T if t_max is None else t_max
    t = np.linspace(top / MAX_BITS_GRID, top, MAX_BITS_GRID)
    bits, _, _ = _best_bits_at_time(u, t, params, bw, offload_only)
    local_only = 0.0
    if not offload_only:
        f_top = min(u.f_max, (u.E_th / (u.eps * params.T)) ** (1.0 / 3.0))
        local_only = params.T * f_top / u.C
    return float(max(np.max(bits), local_only))


def degenerate_users(params: SystemParams, offload_only: bool = False) -> Dict[int, str]:
    """以封閉解處理的用戶: 任務為零，或沒有保密優勢 (H <= G)"""
    out: Dict[int, str] = {}
    for k, u in enumerate(params.users):
        if u.L == 0:
            out[k] = 'zero_task'
        elif not u.can_offload:
            out[k] = 'no_secrecy'
    return out


def _pinned_user(u: UserParams, k: int, reason: str, params: SystemParams, offload_only: bool):
    """退化用戶的封閉解 (t, f, ptilde)"""
    if reason == 'zero_task':
        return 0.0, 0.0, 0.0
    # 沒有保密優勢: 整個任務在本地計算
    if offload_only:
        raise InfeasibleInstance(k, u.L, 0.0)
    f = u.C * u.L / params.T
    if f > u.f_max * (1 + 1e-12) or u.eps * f**3 * params.T > u.E_th * (1 + 1e-12):
        raise InfeasibleInstance(k, u.L, max_achievable_bits(u, params, offload_only=False))
    return 0.0, f, 0.0


# ===== 初始化 =====

def initialize(
    params: SystemParams,
    settings: SolverSettings = SolverSettings(),
    offload_only: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[DecisionPoint, AuxiliaryState]:
    """
    可行的起始點與對應的比值乘子

    確定性起點: 時間平均分配 0.9 T，本地頻率盡量涵蓋任務，
    剩餘能量的一半用於傳輸。位元數不足的用戶改用同一時間下的最大位元分配。

    Args:
        params: 系統參數
        settings: 求解設定
        offload_only: 所有用戶固定 f = 0
        rng: 抽樣起點用的亂數產生器；時間比例、本地頻率比例與
            傳輸能量比例改為隨機。None 時為確定性起點

    Raises:
        InfeasibleInstance: 某用戶無法達到 L_k；max_bits 為憑證
    """
    B = effective_bandwidth(params, settings)
    T, K = params.T, params.K
    if rng is None:
        shares = np.full(K, 0.9 / K)
        f_scale = np.ones(K)
        p_frac = np.full(K, 0.5)
    else:
        shares = np.maximum(rng.dirichlet(np.ones(K)), 0.05 / K)
        shares = 0.9 * shares / shares.sum()
        f_scale = rng.uniform(0.3, 1.0, size=K)
        p_frac = rng.uniform(0.2, 0.8, size=K)
    t, f, pt = np.zeros(K), np.zeros(K), np.zeros(K)

    for k, u in enumerate(params.users):
        if u.L == 0:
            t[k], f[k], pt[k] = settings.t_floor * 10, 0.0, 0.0
            continue
        tk = shares[k] * T if u.can_offload else settings.t_floor * 10
        if offload_only:
            fk = 0.0
        else:
            fk = min(u.f_max, u.C * u.L / T) * f_scale[k]
            cap = (max(0.0, u.E_th - params.p_r * tk) * 0.5 / (u.eps * T)) ** (1.0 / 3.0)
            fk = min(fk, cap)
        spare = max(0.0, u.E_th - u.eps * fk**3 * T - params.p_r * tk)
        pk = p_frac[k] * spare if u.can_offload else 0.0
        bits = float(secrecy_bits_array(tk, pk, u.H, u.G, B) + T * fk / u.C)

        if bits < u.L * (1 + START_MARGIN):
            best, f_best, pt_best = _best_bits_at_time(u, np.array([tk]), params, B, offload_only)
            if best[0] >= u.L * (1 + START_MARGIN):
                fk = float(f_best[0])
                # 保留一點預算，讓能量約束維持嚴格成立
                pk = float(pt_best[0]) * (1 - START_MARGIN)
            else:
                cert = max_achievable_bits(u, params, B, offload_only=offload_only)
                logger.warning(f"❌ user {k}: task of {u.L:.6g} bits not reachable (max {cert:.6g})")
                raise InfeasibleInstance(k, u.L, cert)
        t[k], f[k], pt[k] = tk, fk, pk

    H, G = params.vector('H'), params.vector('G')
    point = DecisionPoint.from_arrays(
        t=t, f=f, m=offloaded_bits(f, params), ptilde=pt, tau=G * pt, N=H * pt,
    )
    return point, initial_aux(point, params, B)


def initial_aux(point: DecisionPoint, params: SystemParams, B: float) -> AuxiliaryState:
    """在該點取 lambda = w/E, beta = wR/E；閒置用戶取 lambda = w, beta = 0"""
    R, E = ratio_terms(point, params, B)
    w = params.vector('w')
    safe = E > 0
    lam = np.where(safe, w / np.where(safe, E, 1.0), w)
    beta = np.where(safe, w * R / np.where(safe, E, 1.0), 0.0)
    return AuxiliaryState.from_arrays(lam=lam, beta=beta)


# ===== 內層 SCA =====

def _tighten(point: DecisionPoint, params: SystemParams) -> DecisionPoint:
    """N = H ptilde, tau = G ptilde；兩者都只會增加保密位元"""
    pt = point.arr('ptilde')
    f = point.arr('f')
    return point.with_fields(N=params.vector('H') * pt, tau=params.vector('G') * pt,
                             m=offloaded_bits(f, params))


def _displacement(a: DecisionPoint, b: DecisionPoint, params: SystemParams) -> float:
    scale_N = params.vector('H') * params.vector('E_th')
    scale_tau = params.vector('G') * params.vector('E_th')
    return float(max(
        np.max(np.abs(a.arr('t') - b.arr('t'))) / params.T,
        np.max(np.abs(a.arr('N') - b.arr('N')) / scale_N),
        np.max(np.abs(a.arr('tau') - b.arr('tau')) / scale_tau),
    ))


def _moved(a: DecisionPoint, b: DecisionPoint, params: SystemParams) -> bool:
    return _displacement(a, b, params) > 0 or bool(np.any(a.arr('f') != b.arr('f')))


def _merit(point: DecisionPoint, params: SystemParams, aux: AuxiliaryState, B: float) -> float:
    """精確模型上的 Dinkelbach 目標 sum lambda (w R - beta E)"""
    R, E = ratio_terms(point, params, B)
    return float(np.sum(np.array(aux.lam) * (params.vector('w') * R - np.array(aux.beta) * E)))


def _bits_ok(point: DecisionPoint, params: SystemParams, B: float) -> bool:
    R, _ = ratio_terms(point, params, B)
    L = params.vector('L')
    return bool(np.all(R >= L - 1e-9 * np.maximum(1.0, L)))


def _repair_bits(point: DecisionPoint, params: SystemParams, B: float,
                 offload_only: bool) -> Optional[DecisionPoint]:
    """
    位元不足的用戶提高本地頻率補足差額

    Returns:
        補足後的點；超出 f_max 或能量預算 (或 offload_only) 時為 None
    """
    if _bits_ok(point, params, B):
        return point
    if offload_only:
        return None
    T = params.T
    t, pt, f = point.arr('t'), point.arr('ptilde'), point.arr('f')
    sec = secrecy_bits_array(t, pt, params.vector('H'), params.vector('G'), B)
    need = params.vector('C') * np.maximum(params.vector('L') - sec, 0.0) / T * (1 + 1e-12)
    f_new = np.maximum(f, need)
    energy = params.vector('eps') * f_new**3 * T + pt + params.p_r * t
    if np.any(f_new > params.vector('f_max')) or np.any(energy > params.vector('E_th')):
        return None
    return _tighten(point.with_fields(f=f_new), params)


def _safeguarded_step(x: DecisionPoint, candidate: DecisionPoint, params: SystemParams,
                      aux: AuxiliaryState, B: float, settings: SolverSettings,
                      offload_only: bool) -> Tuple[DecisionPoint, float]:
    """
    從 x 朝 candidate 回溯 gamma = 1, zeta, ...，接受第一個位元足夠且
    精確 Dinkelbach 目標不下降的點

    Returns:
        (接受的點, gamma)；沒有可接受的步長時為 (x, 0.0)
    """
    base = _merit(x, params, aux, B)
    for l in range(settings.l_max + 1):
        gamma = settings.zeta ** l
        trial = _tighten(x.with_fields(
            t=x.arr('t') + gamma * (candidate.arr('t') - x.arr('t')),
            f=x.arr('f') + gamma * (candidate.arr('f') - x.arr('f')),
            ptilde=x.arr('ptilde') + gamma * (candidate.arr('ptilde') - x.arr('ptilde')),
        ), params)
        trial = _repair_bits(trial, params, B, offload_only)
        if trial is not None and _merit(trial, params, aux, B) >= base:
            return trial, gamma
    return x, 0.0


def inner_sca(
    params: SystemParams,
    aux: AuxiliaryState,
    start: DecisionPoint,
    tol: Tolerances = Tolerances(),
    settings: SolverSettings = SolverSettings(),
    offload_only: bool = False,
    trace: Optional[List[InnerTraceEntry]] = None,
) -> DecisionPoint:
    """
    反覆 線性化 -> 組裝 -> 求解，直到子問題目標與 (t, N, tau) 位移穩定

    預設兩個熵項都線性化，並在 (t, N) 加上 entropy(N, t) 曲率的對角
    近端項 (settings.prox_scale)；朝子問題最優解的移動以精確 Dinkelbach
    目標回溯，位元不足時以本地頻率補足。cccp_faithful 時一律採用完整步長。
    障礙法未收斂時改以其最後迭代點做同樣的回溯。

    Args:
        params: 系統參數 (僅含參與求解的用戶)
        aux: 固定的比值乘子
        start: 可行的起始點
        trace: 若提供，每次迭代附加一筆紀錄

    Raises:
        SubproblemInfeasible: 在最後一個可行迭代點重新置中後仍不可行
        NoConvergence: 子問題未收斂且回溯找不到改善；best 為目前迭代點
    """
    B = effective_bandwidth(params, settings)
    cccp = settings.cccp_faithful
    x = start
    last_feasible = start
    recentered = False

    def build(at: DecisionPoint):
        lin = make_linearization(at, settings.t_floor)
        return assemble_p4(params, aux, lin, start=at, cccp=cccp, offload_only=offload_only,
                           B=B, t_floor=settings.t_floor, prox_scale=settings.prox_scale)

    spec = build(x)
    prev = spec.objective_value(point_to_vector(x))

    for j in range(1, tol.max_inner + 1):
        approximate = False
        try:
            sol = solve_p4(spec, settings.tol_kkt, settings.tol_feas, settings.max_newton)
            target, objective = sol.point, sol.objective
        except SubproblemInfeasible as e:
            if recentered:
                raise
            logger.warning(f"⚠️  {e}; re-centering at the last feasible iterate")
            recentered = True
            x = last_feasible
            spec = build(x)
            prev = spec.objective_value(point_to_vector(x))
            continue
        except NoConvergence as e:
            if e.best is None:
                raise NoConvergence(str(e), best=x)
            logger.warning(f"⚠️  {e}; backtracking toward the last barrier iterate")
            target = e.best
            objective = spec.objective_value(point_to_vector(e.best))
            approximate = True

        candidate = _tighten(target, params)
        # 與子問題解的距離；不受回溯步長影響
        gap = _displacement(candidate, x, params)
        step = 1.0
        if approximate or not cccp:
            candidate, step = _safeguarded_step(x, candidate, params, aux, B, settings, offload_only)
            if approximate and step == 0.0:
                raise NoConvergence(f"inner iteration {j}: subproblem did not converge and no "
                                    f"backtracked step improves the merit", best=x)

        disp = _displacement(candidate, x, params)
        change = abs(objective - prev)
        if trace is not None:
            trace.append(InnerTraceEntry(j=j, objective=objective, displacement=disp, step=step))
        logger.debug(f"inner {j}: objective={objective:.10e} gap={gap:.3e} displacement={disp:.3e} step={step:.3g}")

        x = candidate
        if _bits_ok(x, params, B):
            last_feasible = x
        if step == 0.0:
            logger.debug(f"inner {j}: no backtracked step improves the merit; stopping")
            return x
        if gap <= tol.u2 or (change <= tol.u2 * max(1.0, abs(objective)) and gap <= 10 * tol.u2):
            return x
        spec = build(x)
        prev = objective

    logger.warning(f"⚠️  inner SCA hit max_inner={tol.max_inner} without settling")
    return x


# ===== 演算法一 =====

def _merge(params: SystemParams, active: List[int], sub_point: Optional[DecisionPoint],
           pinned: Dict[int, Tuple[float, float, float]]) -> DecisionPoint:
    K = params.K
    t, f, pt = np.zeros(K), np.zeros(K), np.zeros(K)
    for k, (tk, fk, pk) in pinned.items():
        t[k], f[k], pt[k] = tk, fk, pk
    if sub_point is not None:
        for i, k in enumerate(active):
            t[k], f[k], pt[k] = sub_point.t[i], sub_point.f[i], sub_point.ptilde[i]
    return DecisionPoint.from_arrays(
        t=t, f=f, m=offloaded_bits(f, params), ptilde=pt,
        tau=params.vector('G') * pt, N=params.vector('H') * pt,
    )


def _report(params: SystemParams, point: DecisionPoint, B: float, termination: Termination,
            t_floor: float, message: str = '', outer=(), inner=()) -> SolveReport:
    total, terms = ce_objective(point, params, B)
    per_user = tuple(
        UserReport(
            t=point.t[k], f=point.f[k], m=point.m[k], ptilde=point.ptilde[k],
            p=point.p[k], ce=terms[k], local_only=point.t[k] <= 10 * t_floor or point.ptilde[k] == 0,
        )
        for k in range(params.K)
    )
    return SolveReport(
        final_ce=total, per_user=per_user, outer_trace=tuple(outer),
        inner_traces=tuple(tuple(tr) for tr in inner), termination=termination,
        message=message, point=point,
    )


def _outer_loop(sub: SystemParams, x: DecisionPoint, aux: AuxiliaryState, tol: Tolerances,
                settings: SolverSettings, offload_only: bool, B: float):
    """
    單一起點的外層乘子迴圈

    Returns:
        (最後接受的點, 終止原因, 訊息, 外層紀錄, 內層紀錄)
    """
    w = sub.vector('w')
    cache: Dict[tuple, tuple] = {}
    state = {'x': x, 'moved': False}

    def solve_inner(a: AuxiliaryState):
        key = (a.lam, a.beta)
        if key not in cache:
            trace: List[InnerTraceEntry] = []
            point = inner_sca(sub, a, state['x'], tol, settings, offload_only, trace)
            if _moved(point, state['x'], sub):
                state['moved'] = True
            R, E = ratio_terms(point, sub, B)
            cache[key] = (point, R, E, trace)
        return cache[key]

    def resolve(a: AuxiliaryState):
        _, R, E, _ = solve_inner(a)
        return R, E

    outer: List[OuterTraceEntry] = []
    inner: List[List[InnerTraceEntry]] = []
    termination = Termination.MAX_OUTER_ITERS
    message = ''
    step = 1.0
    try:
        for i in range(1, tol.max_outer + 1):
            point, R, E, trace = solve_inner(aux)
            state['x'] = point
            res = residual_from_terms(R, E, aux, w, settings.strict_paper_T)
            ce, _ = ce_objective(point, sub, B)
            outer.append(OuterTraceEntry(
                iteration=i, residual_norm=res.norm, scaled_residual=res.scaled_norm,
                lam=aux.lam, beta=aux.beta, objective=ce, step=step,
                t=point.t, f=point.f, p=point.p,
            ))
            inner.append(trace)
            logger.info(f"outer {i}: ||T||={res.norm:.6e} (scaled {res.scaled_norm:.3e}) CE={ce:.6e}")
            if res.scaled_norm <= tol.u1:
                termination = Termination.RESIDUAL_CONVERGED
                break
            if i == tol.max_outer:
                break
            try:
                upd = damped_aux_update(
                    aux, resolve, w, settings.z, settings.zeta, settings.l_max,
                    settings.strict_paper_T, settings.cheap_backtrack, current=(R, E),
                )
            except StallError as e:
                logger.warning(f"⚠️  {e}")
                termination = Termination.STALLED
                message = str(e)
                break
            aux, step = upd.aux, upd.step
    except NoConvergence as e:
        logger.error(f"❌ {e}; keeping the last accepted iterate")
        termination = Termination.ERROR
        message = str(e)

    if termination == Termination.RESIDUAL_CONVERGED and not state['moved']:
        # 殘差在初始化點上恆為零
        termination = Termination.STALLED
        message = 'inner solves never moved the initialization point'
        logger.warning(f"⚠️  {message}")
    elif termination == Termination.RESIDUAL_CONVERGED:
        logger.info(f"✅ converged after {len(outer)} outer iterations")
    return state['x'], termination, message, outer, inner


def run_algorithm1(
    params: SystemParams,
    tol: Tolerances = Tolerances(),
    settings: SolverSettings = SolverSettings(),
    offload_only: bool = False,
) -> SolveReport:
    """
    外層乘子迴圈包住內層 SCA 迴圈

    退化用戶以封閉解固定，不進入殘差系統；最終 CE 在精確模型上重新計算。
    settings.starts > 1 時，另以 start_seed 抽樣的起點各跑一次，
    回傳未失敗且 CE 最高的結果。障礙法未收斂時終止原因為 Error，
    保留最後接受的迭代點。
    """
    B = effective_bandwidth(params, settings)
    degenerate = degenerate_users(params, offload_only)
    try:
        pinned = {k: _pinned_user(params.users[k], k, reason, params, offload_only)
                  for k, reason in degenerate.items()}
    except InfeasibleInstance as e:
        logger.warning(f"❌ {e}")
        return _report(params, DecisionPoint.zeros(params.K), B, Termination.INFEASIBLE,
                       settings.t_floor, message=str(e))
    active = [k for k in range(params.K) if k not in degenerate]
    if not active:
        point = _merge(params, active, None, pinned)
        return _report(params, point, B, Termination.CLOSED_FORM, settings.t_floor,
                       message='every user solved in closed form')

    sub = params.subset(active)
    rng = np.random.default_rng(settings.start_seed)
    reports: List[SolveReport] = []
    for s in range(settings.starts):
        try:
            x, aux = initialize(sub, settings, offload_only, rng=None if s == 0 else rng)
        except InfeasibleInstance as e:
            e.user = active[e.user]
            if s == 0:
                return _report(params, DecisionPoint.zeros(params.K), B, Termination.INFEASIBLE,
                               settings.t_floor, message=f"user {e.user}: {e.required_bits:.6g} bits required, "
                                                         f"at most {e.max_bits:.6g} achievable")
            logger.warning(f"⚠️  start {s} skipped: {e}")
            continue
        final_sub, termination, message, outer, inner = _outer_loop(
            sub, x, aux, tol, settings, offload_only, B)
        point = _merge(params, active, final_sub, pinned)
        report = _report(params, point, B, termination, settings.t_floor, message, outer, inner)
        if settings.starts > 1:
            logger.info(f"start {s}: CE={report.final_ce:.6e} ({termination.value})")
        reports.append(report)

    best = max(reports, key=lambda r: (not r.termination.is_error, r.final_ce))
    violations = check_feasibility(best.point, params, B=B)
    if violations:
        logger.warning(f"⚠️  final point violates {[v.constraint for v in violations]}")
    return best


# ===== 基準方案 =====

def baseline_local_only(params: SystemParams) -> LocalOnlyResult:
    """全部任務在本地以 f = C L / T 計算；CE_k = w L / (eps f^3 T)"""
    T = params.T
    ce, feasible, f_all = [], [], []
    for k, u in enumerate(params.users):
        f = u.C * u.L / T
        energy = u.eps * f**3 * T
        ok = f <= u.f_max * (1 + 1e-12) and energy <= u.E_th * (1 + 1e-12)
        if not ok:
            logger.warning(f"⚠️  local-only infeasible for user {k}: f={f:.3e} Hz, energy={energy:.3e} J")
        feasible.append(bool(ok))
        ce.append(u.w * u.L / energy if ok and energy > 0 else 0.0)
        f_all.append(f if ok else 0.0)
    K = params.K
    f_arr = np.array(f_all)
    point = DecisionPoint.from_arrays(
        t=np.zeros(K), f=f_arr, m=np.zeros(K), ptilde=np.zeros(K), tau=np.zeros(K), N=np.zeros(K),
    )
    return LocalOnlyResult(per_user_ce=tuple(ce), feasible=tuple(feasible), total=float(sum(ce)), point=point)


def baseline_offload_only(
    params: SystemParams,
    tol: Tolerances = Tolerances(),
    settings: SolverSettings = SolverSettings(),
) -> SolveReport:
    """同一套演算法，所有 f_k 固定為零"""
    return run_algorithm1(params, tol, settings, offload_only=True)


# ===== 窮舉驗證 =====

def _user_table(u: UserParams, params: SystemParams, t_grid: np.ndarray, grid: OracleGrid, B: float):
    """單一用戶在每個時間格點上，(f, p) 格點中的最佳加權 CE"""
    T = params.T
    f_top = grid.f_max_hz if grid.f_max_hz is not None else min(u.f_max, (u.E_th / (u.eps * T)) ** (1.0 / 3.0))
    f_top = min(f_top, u.f_max)
    p_top = grid.p_max_w if grid.p_max_w is not None else u.E_th / T
    f = np.linspace(0.0, f_top, grid.n)[:, None]
    p = np.linspace(0.0, p_top, grid.n)[None, :]

    best_val = np.full(len(t_grid), -np.inf)
    best_f = np.zeros(len(t_grid))
    best_p = np.zeros(len(t_grid))
    for i, t in enumerate(t_grid):
        pt = p * t
        energy = u.eps * f**3 * T + pt + params.p_r * t
        bits = secrecy_bits_array(t, pt, u.H, u.G, B) + T * f / u.C
        ok = (energy <= u.E_th) & (bits >= u.L * (1 - 1e-12))
        with np.errstate(divide='ignore', invalid='ignore'):
            ce = np.where(energy > 0, u.w * bits / energy, 0.0)
        ce = np.where(ok, ce, -np.inf)
        j = int(np.argmax(ce))
        jf, jp = np.unravel_index(j, ce.shape)
        best_val[i] = ce[jf, jp]
        best_f[i] = f[jf, 0]
        best_p[i] = p[0, jp] if t > 0 else 0.0
    return best_val, best_f, best_p


def brute_force_oracle(params: SystemParams, grid: OracleGrid = OracleGrid(), B: Optional[float] = None) -> OracleResult:
    """
    在 (t_k, f_k, p_k) 格點上以精確模型窮舉

    各用戶在時間格點上的最佳值表，以共用時限的背包法合併。
    格點由 n 加密為 2n-1 只會增加格點。

    Raises:
        InfeasibleInstance: 某用戶在任何格點上都無法完成任務
    """
    bw = params.B if B is None else B
    n = grid.n
    t_grid = np.linspace(0.0, params.T, n)
    tables = []
    for k, u in enumerate(params.users):
        val, f, p = _user_table(u, params, t_grid, grid, bw)
        if not np.any(np.isfinite(val)):
            raise InfeasibleInstance(k, u.L, max_achievable_bits(u, params, bw))
        tables.append((val, f, p))

    # dp[s] = 時間索引總和為 s 時的最佳總和
    dp = np.full(n, -np.inf)
    dp[0] = 0.0
    choice = []
    for val, _, _ in tables:
        new = np.full(n, -np.inf)
        pick = np.zeros(n, dtype=int)
        for s in range(n):
            if not np.isfinite(dp[s]):
                continue
            for i in range(n - s):
                cand = dp[s] + val[i]
                if cand > new[s + i]:
                    new[s + i] = cand
                    pick[s + i] = i
        choice.append(pick)
        dp = new

    s = int(np.argmax(dp))
    if not np.isfinite(dp[s]):
        raise InfeasibleInstance(0, params.users[0].L, max_achievable_bits(params.users[0], params, bw))
    idx = []
    for pick in reversed(choice):
        i = int(pick[s])
        idx.append(i)
        s -= i
    idx.reverse()

    K = params.K
    t = np.array([t_grid[i] for i in idx])
    f = np.array([tables[k][1][idx[k]] for k in range(K)])
    p = np.array([tables[k][2][idx[k]] for k in range(K)])
    pt = p * t
    point = DecisionPoint.from_arrays(
        t=t, f=f, m=offloaded_bits(f, params), ptilde=pt,
        tau=params.vector('G') * pt, N=params.vector('H') * pt,
    )
    ce, _ = ce_objective(point, params, bw)
    return OracleResult(ce=ce, point=point)
