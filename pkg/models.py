# models.py
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import DEFAULT_CIRCUIT_POWER_W, T_FLOOR


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)


# ===== 系統參數 =====

class UserParams(_Frozen):
    """單一用戶裝置：任務、CPU 與通道參數"""
    w: float = Field(1.0, gt=0)
    L: float = Field(..., ge=0)
    C: float = Field(1000.0, gt=0)
    eps: float = Field(1e-24, gt=0)
    f_max: float = Field(1e9, gt=0)
    E_th: float = Field(1.0, gt=0)
    H: float = Field(..., gt=0)
    G: float = Field(..., gt=0)

    @property
    def can_offload(self) -> bool:
        return self.H > self.G


class SystemParams(_Frozen):
    """不可變的系統場景：頻寬、時限、電路功率與所有用戶"""
    B: float = Field(2e5, gt=0)
    T: float = Field(1.0, gt=0)
    p_r: float = Field(DEFAULT_CIRCUIT_POWER_W, ge=0)
    users: Tuple[UserParams, ...] = Field(..., min_length=1)

    @property
    def K(self) -> int:
        return len(self.users)

    def vector(self, name: str) -> np.ndarray:
        """以浮點陣列取出每個用戶的欄位，例如 params.vector('H')"""
        return np.array([getattr(u, name) for u in self.users], dtype=float)

    def subset(self, indices: List[int]) -> "SystemParams":
        return self.model_copy(update={'users': tuple(self.users[i] for i in indices)})


# ===== 決策變數 =====

_POINT_FIELDS = ('t', 'f', 'm', 'ptilde', 'tau', 'N')


class DecisionPoint(_Frozen):
    """
    所有用戶的一組分配

    ptilde 為傳輸能量 p*t；tau 與 N 分別是竊聽端與合法端的
    SNR 能量輔助變數
    """
    t: Tuple[float, ...]
    f: Tuple[float, ...]
    m: Tuple[float, ...]
    ptilde: Tuple[float, ...]
    tau: Tuple[float, ...]
    N: Tuple[float, ...]

    @model_validator(mode='after')
    def _check_shape(self):
        lengths = {len(getattr(self, name)) for name in _POINT_FIELDS}
        if len(lengths) != 1:
            raise ValueError(f"all per-user fields must have the same length, got {sorted(lengths)}")
        for name in _POINT_FIELDS:
            if any(v < 0 for v in getattr(self, name)):
                raise ValueError(f"{name} must be nonnegative")
        return self

    @classmethod
    def from_arrays(cls, **arrays) -> "DecisionPoint":
        """由 numpy 陣列建立；微小的負捨入誤差截為零"""
        values = {}
        for name in _POINT_FIELDS:
            arr = np.asarray(arrays[name], dtype=float)
            values[name] = tuple(float(v) for v in np.maximum(arr, 0.0))
        return cls(**values)

    @classmethod
    def zeros(cls, K: int) -> "DecisionPoint":
        return cls(**{name: (0.0,) * K for name in _POINT_FIELDS})

    @property
    def K(self) -> int:
        return len(self.t)

    def arr(self, name: str) -> np.ndarray:
        return np.array(getattr(self, name), dtype=float)

    @property
    def p(self) -> Tuple[float, ...]:
        """傳輸功率 ptilde/t；t 為零時回傳零"""
        return tuple(pt / t if t > 0 else 0.0 for pt, t in zip(self.ptilde, self.t))

    def with_fields(self, **arrays) -> "DecisionPoint":
        merged = {name: arrays.get(name, self.arr(name)) for name in _POINT_FIELDS}
        return DecisionPoint.from_arrays(**merged)


class EnergyBreakdown(_Frozen):
    offload_tx: Tuple[float, ...]
    offload_circuit: Tuple[float, ...]
    local: Tuple[float, ...]
    total: Tuple[float, ...]


class Violation(_Frozen):
    """原問題中一條被違反的約束"""
    constraint: Literal['C1', 'C2', 'C3', 'C4', 'C6']
    user: Optional[int] = None
    amount: float
    detail: str = ''


# ===== 分式規劃 =====

class AuxiliaryState(BaseModel):
    """比值和乘子；lam 序列化為 'lambda'"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False, populate_by_name=True)

    lam: Tuple[float, ...] = Field(..., alias='lambda')
    beta: Tuple[float, ...]

    @model_validator(mode='after')
    def _check(self):
        if len(self.lam) != len(self.beta):
            raise ValueError("lambda and beta must have the same length")
        if any(v <= 0 for v in self.lam):
            raise ValueError("lambda must be strictly positive")
        if any(v < 0 for v in self.beta):
            raise ValueError("beta must be nonnegative")
        return self

    @classmethod
    def from_arrays(cls, lam, beta) -> "AuxiliaryState":
        return cls(lam=tuple(float(v) for v in lam), beta=tuple(float(v) for v in beta))


class ResidualVector(_Frozen):
    """殘差向量：T_j = beta_j E_j - w_j R_j，接著 T_{j+K} = lambda_j E_j - w_j"""
    entries: Tuple[float, ...]
    norm: float
    scaled_norm: float


# ===== 求解設定 =====

class Tolerances(_Frozen):
    u1: float = Field(1e-6, gt=0)
    u2: float = Field(1e-7, gt=0)
    max_outer: int = Field(50, ge=1)
    max_inner: int = Field(50, ge=1)


class SolverSettings(_Frozen):
    """演算法開關與數值常數"""
    strict_paper_T: bool = False
    cccp_faithful: bool = False
    log2_rates: bool = False
    cheap_backtrack: bool = False
    z: float = Field(1e-4, gt=0, lt=1)
    zeta: float = Field(0.5, gt=0, lt=1)
    l_max: int = Field(8, ge=0)
    tol_kkt: float = Field(1e-8, gt=0)
    tol_feas: float = Field(1e-9, gt=0)
    max_newton: int = Field(200, ge=1)
    t_floor: float = Field(T_FLOOR, gt=0)
    # 兩項皆線性化時 (t, N) 近端項的倍數；0 為純一階展開
    prox_scale: float = Field(1.0, ge=0)
    # 多起點: 第一個起點為確定性初始化，其餘由 start_seed 抽樣
    starts: int = Field(1, ge=1)
    start_seed: int = Field(0, ge=0)


class Termination(str, Enum):
    RESIDUAL_CONVERGED = 'ResidualConverged'
    MAX_OUTER_ITERS = 'MaxOuterIters'
    INFEASIBLE = 'Infeasible'
    STALLED = 'Stalled'
    CLOSED_FORM = 'ClosedForm'
    ERROR = 'Error'

    @property
    def is_error(self) -> bool:
        return self in (Termination.INFEASIBLE, Termination.STALLED, Termination.ERROR)


# ===== 報告 =====

class UserReport(_Frozen):
    t: float
    f: float
    m: float
    ptilde: float
    p: float
    ce: float
    local_only: bool = False


class OuterTraceEntry(_Frozen):
    iteration: int
    residual_norm: float
    scaled_residual: float
    lam: Tuple[float, ...]
    beta: Tuple[float, ...]
    objective: float
    step: float = 1.0
    t: Tuple[float, ...] = ()
    f: Tuple[float, ...] = ()
    p: Tuple[float, ...] = ()


class InnerTraceEntry(_Frozen):
    j: int
    objective: float
    displacement: float
    step: float = 1.0


class SolveReport(_Frozen):
    final_ce: float
    per_user: Tuple[UserReport, ...]
    outer_trace: Tuple[OuterTraceEntry, ...] = ()
    inner_traces: Tuple[Tuple[InnerTraceEntry, ...], ...] = ()
    termination: Termination
    message: str = ''
    point: Optional[DecisionPoint] = None

    @property
    def outer_iters(self) -> int:
        return len(self.outer_trace)


class LocalOnlyResult(_Frozen):
    per_user_ce: Tuple[float, ...]
    feasible: Tuple[bool, ...]
    total: float
    point: DecisionPoint


class OracleGrid(_Frozen):
    n: int = Field(200, ge=2)
    p_max_w: Optional[float] = Field(None, gt=0)
    f_max_hz: Optional[float] = Field(None, gt=0)


class OracleResult(_Frozen):
    ce: float
    point: DecisionPoint


# ===== 實驗設定 (JSON) =====

class UserConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True, allow_inf_nan=False)

    weight: float = Field(1.0, gt=0)
    task_bits: float = Field(5e4, ge=0)
    cycles_per_bit: float = Field(1000.0, gt=0)
    eps: float = Field(1e-24, gt=0)
    f_max_hz: float = Field(1e9, gt=0)
    energy_budget_j: float = Field(1.0, gt=0)
    H: float = Field(..., gt=0)
    G: float = Field(..., gt=0)


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True, allow_inf_nan=False)

    L: List[float] = Field(default_factory=lambda: [5e4, 6e4], min_length=1)
    G_scale: List[float] = Field(default_factory=lambda: [1.0], min_length=1)

    @field_validator('L')
    @classmethod
    def _nonnegative_bits(cls, v: List[float]) -> List[float]:
        if any(x < 0 for x in v):
            raise ValueError("sweep L values must be nonnegative")
        return v

    @field_validator('G_scale')
    @classmethod
    def _positive_scale(cls, v: List[float]) -> List[float]:
        if any(x <= 0 for x in v):
            raise ValueError("sweep G_scale values must be positive")
        return v


def _default_users() -> List[UserConfig]:
    return [UserConfig(H=7.0, G=1.0), UserConfig(H=5.0, G=1.0)]


class ExperimentConfig(BaseModel):
    """由 JSON 載入的實驗設定；未知欄位一律拒絕"""
    model_config = ConfigDict(extra='forbid', frozen=True, allow_inf_nan=False)

    scenario: Literal['convergence', 'ce_vs_bits', 'scheme_compare', 'single_run']
    bandwidth_hz: float = Field(2e5, gt=0)
    deadline_s: float = Field(1.0, gt=0)
    circuit_power_w: float = Field(DEFAULT_CIRCUIT_POWER_W, ge=0)
    users: List[UserConfig] = Field(default_factory=_default_users, min_length=1)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seed: Optional[int] = None
    channel_mode: Literal['deterministic', 'random'] = 'deterministic'
    output: Optional[str] = None
    solver: SolverSettings = Field(default_factory=SolverSettings)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    @model_validator(mode='after')
    def _seed_for_random(self):
        if self.channel_mode == 'random' and self.seed is None:
            raise ValueError("seed is required when channel_mode is 'random'")
        return self

    def to_system_params(
        self,
        L: Optional[float] = None,
        G_scale: float = 1.0,
        channels: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> SystemParams:
        """
        建立單一掃描點的求解場景

        Args:
            L: 套用到所有用戶的任務大小（None 保留各自的 task_bits）
            G_scale: 竊聽端通道增益的倍數
            channels: sample_channels 產生的有效 (H, G) 陣列
        """
        users = []
        for k, u in enumerate(self.users):
            H = float(channels[0][k]) if channels is not None else u.H
            G = float(channels[1][k]) if channels is not None else u.G
            users.append(UserParams(
                w=u.weight,
                L=u.task_bits if L is None else L,
                C=u.cycles_per_bit,
                eps=u.eps,
                f_max=u.f_max_hz,
                E_th=u.energy_budget_j,
                H=H,
                G=G * G_scale,
            ))
        return SystemParams(
            B=self.bandwidth_hz,
            T=self.deadline_s,
            p_r=self.circuit_power_w,
            users=tuple(users),
        )


class ResultRow(BaseModel):
    """
    一筆 (掃描點, 方案, 迭代) 紀錄；每個用戶展開為一行 CSV

    失敗的點以 NaN 分配與零 CE 表示
    """
    model_config = ConfigDict(frozen=True)

    scenario: str
    L: float
    G_scale: float
    scheme: str
    iteration: int
    t: Tuple[float, ...]
    f: Tuple[float, ...]
    p: Tuple[float, ...]
    ce: float = Field(..., ge=0)
    outer_iters: int
    termination: Termination


CSV_HEADER: List[str] = [
    'scenario', 'L', 'G_scale', 'scheme', 'user', 'iter', 't_s', 'f_hz', 'p_w',
    'ce_bits_per_joule', 'outer_iters', 'termination',
]

SCHEMES: Dict[str, str] = {
    'joint': 'joint secure offloading and local computing',
    'local_only': 'local computing only',
    'offload_only': 'secure offloading only',
    'oracle': 'brute-force grid oracle',
}
