# sca.py

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from config import T_FLOOR
from errors import DomainError, ExpansionError
from models import DecisionPoint


# ===== 熵函數 =====

def _require_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise DomainError(f"{name} must be finite, got {value}")


def entropy(x: float, y: float) -> float:
    """
    y * ln(1 + x/y)，即 ln(1 + x) 的透視函數

    在非負象限上聯合凹；座標軸上取連續極限 0

    Args:
        x: SNR 能量項 (N 或 tau)，須 >= 0
        y: 卸載時間 t，須 >= 0

    Raises:
        DomainError: 引數為負或非有限值
    """
    _require_finite(x=x, y=y)
    if x < 0 or y < 0:
        raise DomainError(f"entropy needs x >= 0 and y >= 0, got ({x}, {y})")
    if x == 0 or y == 0:
        return 0.0
    return y * math.log1p(x / y)


def entropy_gradient(x0: float, y0: float) -> Tuple[float, float]:
    """entropy 在 (x0, y0) 的偏導數 (d/dx, d/dy)；需要 y0 > 0"""
    _require_finite(x0=x0, y0=y0)
    if y0 <= 0:
        raise DomainError(f"entropy gradient needs y0 > 0, got {y0}")
    if x0 < 0:
        raise DomainError(f"entropy gradient needs x0 >= 0, got {x0}")
    dx = y0 / (x0 + y0)
    dy = math.log1p(x0 / y0) - x0 / (x0 + y0)
    return dx, dy


def entropy_hessian(x0: float, y0: float) -> np.ndarray:
    """entropy 對 (x, y) 的 2x2 Hessian；半負定"""
    if y0 <= 0 or x0 < 0:
        raise DomainError(f"entropy Hessian needs x0 >= 0, y0 > 0, got ({x0}, {y0})")
    s = x0 + y0
    return np.array([
        [-y0 / s**2, x0 / s**2],
        [x0 / s**2, -x0**2 / (y0 * s**2)],
    ])


# 障礙法與窮舉驗證用的向量化版本

def entropy_array(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    mask = (x > 0) & (y > 0)
    xb, yb = np.broadcast_to(x, out.shape), np.broadcast_to(y, out.shape)
    out[mask] = yb[mask] * np.log1p(xb[mask] / yb[mask])
    return out


def entropy_derivatives(x: np.ndarray, y: np.ndarray):
    """y > 0 的陣列上 entropy 的梯度與 Hessian 各元素"""
    s = x + y
    gx = y / s
    gy = np.log1p(x / y) - x / s
    hxx = -y / s**2
    hxy = x / s**2
    hyy = -x**2 / (y * s**2)
    return gx, gy, hxx, hxy, hyy


# ===== 線性化 =====

@dataclass(frozen=True)
class LinearizationPoint:
    """
    保密位元項在 (t0, N0, tau0) 的一階展開狀態

    v 與 theta 為 entropy(N, t)、entropy(tau, t) 對 t 的偏導數；
    dN 與 dtau 為對 N、tau 的偏導數；phi 為展開點上
    兩熵項的精確差值
    """
    t0: np.ndarray
    N0: np.ndarray
    tau0: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    dN: np.ndarray
    dtau: np.ndarray

    @property
    def K(self) -> int:
        return len(self.t0)


def make_linearization(point: DecisionPoint, t_floor: float = T_FLOOR) -> LinearizationPoint:
    """
    在給定點展開每個用戶的兩個熵項

    Args:
        point: 展開點
        t_floor: t 的下限；不大於此值的用戶無法展開

    Raises:
        ExpansionError: 某用戶的卸載時間不大於 t_floor
    """
    t0 = point.arr('t')
    N0 = point.arr('N')
    tau0 = point.arr('tau')
    for k, tk in enumerate(t0):
        if not tk > t_floor:
            raise ExpansionError(k, float(tk), t_floor)

    v = np.log1p(N0 / t0) - N0 / (N0 + t0)
    theta = np.log1p(tau0 / t0) - tau0 / (tau0 + t0)
    phi = t0 * np.log1p(N0 / t0) - t0 * np.log1p(tau0 / t0)
    return LinearizationPoint(
        t0=t0, N0=N0, tau0=tau0,
        v=v, theta=theta, phi=phi,
        dN=t0 / (t0 + N0), dtau=t0 / (t0 + tau0),
    )


def linearized_secrecy_bits(t, N, tau, lin: LinearizationPoint, B: float) -> np.ndarray:
    """每個用戶的 B * [(v - theta)(t - t0) + dN (N - N0) - dtau (tau - tau0) + phi]"""
    t = np.asarray(t, dtype=float)
    N = np.asarray(N, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return B * (
        (lin.v - lin.theta) * (t - lin.t0)
        + lin.dN * (N - lin.N0)
        - lin.dtau * (tau - lin.tau0)
        + lin.phi
    )


def cccp_secrecy_bits(t, N, tau, lin: LinearizationPoint, B: float) -> np.ndarray:
    """
    entropy(N, t) 保持精確，只線性化 entropy(tau, t)

    在 tau >= G*ptilde 時不超過真實保密位元數，
    是保守的替代函數
    """
    t = np.asarray(t, dtype=float)
    N = np.asarray(N, dtype=float)
    tau = np.asarray(tau, dtype=float)
    eave0 = lin.t0 * np.log1p(lin.tau0 / lin.t0)
    eave_lin = eave0 + lin.theta * (t - lin.t0) + lin.dtau * (tau - lin.tau0)
    return B * (entropy_array(N, t) - eave_lin)
