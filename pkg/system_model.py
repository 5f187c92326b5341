# system_model.py

import math
from typing import List, Tuple

import numpy as np

from errors import DomainError, InconsistencyError
from models import DecisionPoint, EnergyBreakdown, SystemParams, UserParams, Violation
from sca import entropy, entropy_array


# ===== 單用戶位元數 =====

def secrecy_bits(t: float, ptilde: float, u: UserParams, B: float) -> float:
    """
    安全卸載的位元數 B*[entropy(H p, t) - entropy(G p, t)]^+

    Args:
        t: 卸載時間 (s)
        ptilde: 傳輸能量 p*t (J)
        u: 用戶參數 (H, G)
        B: 頻寬 (Hz)
    """
    for name, value in (('t', t), ('ptilde', ptilde), ('B', B)):
        if not math.isfinite(value):
            raise DomainError(f"{name} must be finite, got {value}")
    if t < 0 or ptilde < 0:
        raise DomainError(f"secrecy_bits needs t >= 0 and ptilde >= 0, got ({t}, {ptilde})")
    if t == 0 or ptilde == 0:
        return 0.0
    gap = entropy(u.H * ptilde, t) - entropy(u.G * ptilde, t)
    return max(0.0, B * gap)


def secrecy_bits_array(t, ptilde, H, G, B: float) -> np.ndarray:
    """可廣播陣列上的向量化 secrecy_bits"""
    t = np.asarray(t, dtype=float)
    ptilde = np.asarray(ptilde, dtype=float)
    gap = entropy_array(H * ptilde, t) - entropy_array(G * ptilde, t)
    return np.maximum(0.0, B * gap)


def local_bits(f: float, T: float, C: float) -> float:
    """時限內本地計算的位元數 T*f/C"""
    if not (math.isfinite(f) and math.isfinite(T) and math.isfinite(C)):
        raise DomainError("local_bits needs finite arguments")
    if C <= 0:
        raise DomainError(f"cycles-per-bit must be positive, got {C}")
    if f < 0 or T <= 0:
        raise DomainError(f"local_bits needs f >= 0 and T > 0, got ({f}, {T})")
    return T * f / C


# ===== 能耗與效率 =====

def _check_size(point: DecisionPoint, params: SystemParams) -> None:
    if point.K != params.K:
        raise DomainError(f"point has {point.K} users but the system has {params.K}")


def total_energy(point: DecisionPoint, params: SystemParams) -> EnergyBreakdown:
    _check_size(point, params)
    tx = point.arr('ptilde')
    circuit = params.p_r * point.arr('t')
    local = params.vector('eps') * point.arr('f') ** 3 * params.T
    total = tx + circuit + local
    if not np.all(np.isfinite(total)):
        raise DomainError("energy is not finite")
    return EnergyBreakdown(
        offload_tx=tuple(tx.tolist()),
        offload_circuit=tuple(circuit.tolist()),
        local=tuple(local.tolist()),
        total=tuple(total.tolist()),
    )


def ratio_terms(point: DecisionPoint, params: SystemParams, B: float | None = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    每個用戶的分子 R_k (總位元數) 與分母 E_k (總能耗)

    B 覆寫頻寬，例如以 2 為底時傳入 B/ln 2
    """
    _check_size(point, params)
    bw = params.B if B is None else B
    R = np.array([
        secrecy_bits(t, pt, u, bw) + local_bits(f, params.T, u.C)
        for t, pt, f, u in zip(point.t, point.ptilde, point.f, params.users)
    ])
    E = np.array(total_energy(point, params).total)
    return R, E


def ce_objective(point: DecisionPoint, params: SystemParams, B: float | None = None) -> Tuple[float, Tuple[float, ...]]:
    """
    加權計算效率 sum_k w_k R_k / E_k

    Returns:
        (總和, 每個用戶的加權項)；閒置用戶貢獻 0
    """
    R, E = ratio_terms(point, params, B)
    w = params.vector('w')
    terms = []
    for k in range(params.K):
        if E[k] == 0:
            if R[k] > 0:
                raise InconsistencyError(f"user {k} computes {R[k]:.3e} bits with zero energy")
            terms.append(0.0)
        else:
            terms.append(float(w[k] * R[k] / E[k]))
    return float(sum(terms)), tuple(terms)


# ===== 可行性檢查 =====

def check_feasibility(
    point: DecisionPoint,
    params: SystemParams,
    tol: float = 1e-6,
    B: float | None = None,
) -> List[Violation]:
    """
    檢查 C1 (時間)、C2 (保密位元涵蓋 m)、C3 (m 範圍)、C4 (能量)
    與 C6 (上下界)；容差相對於各約束的尺度

    約束編號中沒有 C5，標籤沿用原編號
    """
    _check_size(point, params)
    bw = params.B if B is None else B
    violations: List[Violation] = []

    total_t = sum(point.t)
    if total_t > params.T * (1 + tol):
        violations.append(Violation(
            constraint='C1', amount=total_t - params.T,
            detail=f"sum t = {total_t:.6g} s exceeds T = {params.T:.6g} s",
        ))

    energy = total_energy(point, params).total
    for k, u in enumerate(params.users):
        scale = max(1.0, u.L)
        sec = secrecy_bits(point.t[k], point.ptilde[k], u, bw)
        m = point.m[k]
        if m - sec > tol * scale:
            violations.append(Violation(
                constraint='C2', user=k, amount=m - sec,
                detail=f"offloaded bits {m:.6g} exceed secure bits {sec:.6g}",
            ))
        lower = u.L - params.T * point.f[k] / u.C
        if m < lower - tol * scale:
            violations.append(Violation(
                constraint='C3', user=k, amount=lower - m,
                detail=f"m = {m:.6g} leaves {lower - m:.6g} bits uncomputed",
            ))
        if m > u.L + tol * scale:
            violations.append(Violation(
                constraint='C3', user=k, amount=m - u.L,
                detail=f"m = {m:.6g} exceeds task size {u.L:.6g}",
            ))
        if energy[k] > u.E_th * (1 + tol):
            violations.append(Violation(
                constraint='C4', user=k, amount=energy[k] - u.E_th,
                detail=f"energy {energy[k]:.6g} J exceeds budget {u.E_th:.6g} J",
            ))
        if point.f[k] > u.f_max * (1 + tol):
            violations.append(Violation(
                constraint='C6', user=k, amount=point.f[k] - u.f_max,
                detail=f"f = {point.f[k]:.6g} Hz exceeds f_max = {u.f_max:.6g} Hz",
            ))
    return violations


# ===== 後處理 =====

def offloaded_bits(f, params: SystemParams) -> np.ndarray:
    """卸載位元數 m_k = clamp(L_k - T f_k / C_k, 0, L_k)"""
    L = params.vector('L')
    return np.clip(L - params.T * np.asarray(f, dtype=float) / params.vector('C'), 0.0, L)


def round_offloaded_bits(point: DecisionPoint, params: SystemParams) -> DecisionPoint:
    """
    將 m_k 取整數: 保密位元足夠時無條件進位，否則捨去，
    並提高 f_k 讓本地計算補足其餘位元
    """
    _check_size(point, params)
    m_new, f_new = [], []
    for k, u in enumerate(params.users):
        m, f = point.m[k], point.f[k]
        sec = secrecy_bits(point.t[k], point.ptilde[k], u, params.B)
        up = float(min(math.ceil(m), math.floor(u.L)))
        if up <= sec + 1e-9:
            m_int = up
        else:
            m_int = float(math.floor(m))
        needed_f = u.C * (u.L - m_int) / params.T
        m_new.append(m_int)
        f_new.append(max(f, needed_f))
    return point.with_fields(m=np.array(m_new), f=np.array(f_new))
