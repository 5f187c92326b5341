# fractional.py

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from errors import InconsistencyError, StallError
from models import AuxiliaryState, DecisionPoint, ResidualVector, SystemParams
from system_model import ratio_terms

logger = logging.getLogger(__name__)

# resolve(aux) -> (R, E): 在 aux 重新求解內層問題，回傳每個用戶的
# 位元數與能量
Resolver = Callable[[AuxiliaryState], Tuple[np.ndarray, np.ndarray]]


def residual_from_terms(
    R: np.ndarray,
    E: np.ndarray,
    aux: AuxiliaryState,
    w: np.ndarray,
    strict_paper_T: bool = False,
) -> ResidualVector:
    """
    T_j = beta_j E_j - w_j R_j，T_{j+K} = lambda_j E_j - w_j

    strict_paper_T 時第二區塊以 1 取代 w_j
    """
    R = np.asarray(R, dtype=float)
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        k = int(np.flatnonzero(E <= 0)[0])
        raise InconsistencyError(f"user {k} has zero energy; idle users must be excluded from the residual system")
    lam = np.array(aux.lam)
    beta = np.array(aux.beta)
    target = np.ones_like(w) if strict_paper_T else w
    first = beta * E - w * R
    second = lam * E - target
    entries = np.concatenate([first, second])
    # 停止條件使用相對形式
    scaled = np.concatenate([first / np.maximum(w * R, 1e-300), second / target])
    return ResidualVector(
        entries=tuple(entries.tolist()),
        norm=float(np.linalg.norm(entries)),
        scaled_norm=float(np.linalg.norm(scaled)),
    )


def residual_vector(
    sol: DecisionPoint,
    aux: AuxiliaryState,
    params: SystemParams,
    strict_paper_T: bool = False,
    B: Optional[float] = None,
) -> ResidualVector:
    """在內層解上計算殘差向量"""
    R, E = ratio_terms(sol, params, B)
    return residual_from_terms(R, E, aux, params.vector('w'), strict_paper_T)


def newton_target(R: np.ndarray, E: np.ndarray, w: np.ndarray, strict_paper_T: bool = False) -> AuxiliaryState:
    """
    固定 (R, E) 時的完整牛頓步

    T 的 Jacobian 為對角矩陣 (元素 E_j)，因此一步即到達
    lambda = w/E, beta = w R/E
    """
    num = np.ones_like(w) if strict_paper_T else w
    return AuxiliaryState.from_arrays(lam=num / E, beta=w * R / E)


@dataclass(frozen=True)
class AuxUpdate:
    aux: AuxiliaryState
    step: float
    old: ResidualVector
    new: ResidualVector
    R: np.ndarray
    E: np.ndarray


def damped_aux_update(
    aux: AuxiliaryState,
    resolve: Resolver,
    w: np.ndarray,
    z: float = 1e-4,
    zeta: float = 0.5,
    l_max: int = 8,
    strict_paper_T: bool = False,
    cheap_backtrack: bool = False,
    current: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> AuxUpdate:
    """
    (lambda, beta) 朝牛頓目標的一次阻尼更新

    依序嘗試 theta = 1, zeta, ..., zeta^l_max，接受第一個滿足
    ||T_new|| <= (1 - z*theta) ||T_old|| 的候選

    Args:
        resolve: 在候選 aux 重新求解內層問題的函式
        current: 已知時為 aux 對應的 (R, E)
        cheap_backtrack: 以固定的 (R, E) 評估候選

    Raises:
        StallError: l_max 次減半內沒有可接受的步長
    """
    if not (0 < z < 1 and 0 < zeta < 1):
        raise ValueError(f"z and zeta must lie in (0, 1), got z={z}, zeta={zeta}")
    w = np.asarray(w, dtype=float)
    R0, E0 = current if current is not None else resolve(aux)
    old = residual_from_terms(R0, E0, aux, w, strict_paper_T)
    target = newton_target(R0, E0, w, strict_paper_T)
    lam, beta = np.array(aux.lam), np.array(aux.beta)
    lam_t, beta_t = np.array(target.lam), np.array(target.beta)

    best_norm = np.inf
    for l in range(l_max + 1):
        theta = zeta ** l
        cand = AuxiliaryState.from_arrays(
            lam=(1 - theta) * lam + theta * lam_t,
            beta=(1 - theta) * beta + theta * beta_t,
        )
        R, E = (R0, E0) if cheap_backtrack else resolve(cand)
        new = residual_from_terms(R, E, cand, w, strict_paper_T)
        best_norm = min(best_norm, new.norm)
        if new.norm <= (1 - z * theta) * old.norm:
            logger.debug(f"aux step theta={theta:.4g}: ||T|| {old.norm:.6e} -> {new.norm:.6e}")
            return AuxUpdate(aux=cand, step=theta, old=old, new=new, R=np.asarray(R), E=np.asarray(E))
    raise StallError(old.norm, float(best_norm))
