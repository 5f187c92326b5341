# subproblem.py

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from config import T_FLOOR
from errors import DomainError, NoConvergence, SubproblemInfeasible
from models import AuxiliaryState, DecisionPoint, SystemParams
from sca import LinearizationPoint, entropy, entropy_derivatives
from system_model import offloaded_bits

logger = logging.getLogger(__name__)

# 變數排列: 用戶 k 佔 x[5k:5k+5] = (t, f, N, tau, ptilde)
T_, F_, N_, TAU_, P_ = range(5)
NVAR = 5
VAR_NAMES = ('t', 'f', 'N', 'tau', 'ptilde')

# 起始點與變換列 (N <= H ptilde, tau >= G ptilde) 及時限列的相對距離
START_INTERIOR = 1e-3


def _ix(k: int, j: int) -> int:
    return NVAR * k + j


# ===== 一般凸規劃 =====

@dataclass(frozen=True)
class ConvexProgram:
    """
    minimize   c.x + q.x^3 + 0.5 sum prox (x - center)^2 - sum rho*entropy(x_a, x_b) + const
    subject to A_r.x + kappa_r.x^3 - sum rho*entropy(x_a, x_b) <= b_r
               lo <= x <= hi

    三次係數、近端權重與熵權重皆非負，目標與每一列在非負象限上皆為凸。
    lo == hi 的變數視為固定。
    """
    c: np.ndarray
    q: np.ndarray
    obj_entropy: Tuple[Tuple[float, int, int], ...]
    A: np.ndarray
    kappa: np.ndarray
    row_entropy: Tuple[Tuple[int, float, int, int], ...]
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    labels: Tuple[str, ...]
    const: float = 0.0
    prox: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.b)

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x + self.q @ x**3 + self.const)
        if self.prox is not None:
            val += 0.5 * float(self.prox @ (x - self.center) ** 2)
        for rho, a, b in self.obj_entropy:
            val -= rho * entropy(max(x[a], 0.0), max(x[b], 0.0))
        return val

    def objective_derivatives(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = self.c + 3.0 * self.q * x**2
        H = np.diag(6.0 * self.q * x)
        if self.prox is not None:
            g = g + self.prox * (x - self.center)
            H[np.diag_indices_from(H)] += self.prox
        for rho, a, b in self.obj_entropy:
            gx, gy, hxx, hxy, hyy = entropy_derivatives(x[a], x[b])
            g[a] -= rho * gx
            g[b] -= rho * gy
            H[a, a] -= rho * hxx
            H[a, b] -= rho * hxy
            H[b, a] -= rho * hxy
            H[b, b] -= rho * hyy
        return g, H

    def rows(self, x: np.ndarray) -> np.ndarray:
        g = self.A @ x + self.kappa @ x**3
        for r, rho, a, b in self.row_entropy:
            g[r] -= rho * entropy(max(x[a], 0.0), max(x[b], 0.0))
        return g

    def row_jacobian(self, x: np.ndarray) -> np.ndarray:
        J = self.A + 3.0 * self.kappa * x**2
        for r, rho, a, b in self.row_entropy:
            gx, gy, *_ = entropy_derivatives(x[a], x[b])
            J[r, a] -= rho * gx
            J[r, b] -= rho * gy
        return J

    def row_hessian(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_r weights_r * (第 r 列的 Hessian)"""
        H = np.diag(6.0 * (weights @ self.kappa) * x)
        for r, rho, a, b in self.row_entropy:
            _, _, hxx, hxy, hyy = entropy_derivatives(x[a], x[b])
            w = weights[r] * rho
            H[a, a] -= w * hxx
            H[a, b] -= w * hxy
            H[b, a] -= w * hxy
            H[b, b] -= w * hyy
        return H


# ===== 障礙法求解器 =====

@dataclass
class BarrierResult:
    x: np.ndarray
    row_duals: np.ndarray
    lo_duals: np.ndarray
    hi_duals: np.ndarray
    kkt_residual: float
    feas_residual: float
    iterations: int
    used_phase_one: bool = False


class BarrierSolver:
    """
    對數障礙內點法，以阻尼牛頓法置中

    每個置中階段最多 max_newton 步牛頓迭代；起始點不嚴格可行時先跑 Phase I。
    """

    MU = 20.0
    ARMIJO = 0.25
    NEWTON_TOL = 1e-12
    INTERIOR_MARGIN = 1e-6
    # Phase I 在最大縮放違反量低於 -PHASE_ONE_DEPTH 時停止
    PHASE_ONE_DEPTH = 1e-3

    def __init__(self, program: ConvexProgram, tol_kkt: float = 1e-8,
                 tol_feas: float = 1e-9, max_newton: int = 200):
        self.program = program
        self.tol_kkt = tol_kkt
        self.tol_feas = tol_feas
        self.max_newton = max_newton
        self.move = program.lo < program.hi
        self.D = np.where(self.move, program.hi - program.lo, 1.0)
        self._sigma: Optional[np.ndarray] = None

    # ----- 公用 -----

    def row_scales(self, x: np.ndarray) -> np.ndarray:
        if self._sigma is None:
            J = self.program.row_jacobian(x)
            grad_scale = np.max(np.abs(J * self.D), axis=1) if self.program.n else np.zeros(self.program.m)
            sigma = np.maximum(np.abs(self.program.b), grad_scale)
            self._sigma = np.where(sigma > 0, sigma, 1.0)
        return self._sigma

    def scaled_violation(self, x: np.ndarray) -> np.ndarray:
        """(g_r(x) - b_r) / sigma_r；負值代表嚴格滿足"""
        return (self.program.rows(x) - self.program.b) / self.row_scales(x)

    def interior_start(self, x0: np.ndarray) -> np.ndarray:
        prog = self.program
        x = np.array(x0, dtype=float)
        margin = self.INTERIOR_MARGIN * self.D
        x = np.where(self.move, np.clip(x, prog.lo + margin, prog.hi - margin), prog.lo)
        return x

    # ----- 主流程 -----

    def solve(self, x0: np.ndarray) -> BarrierResult:
        """
        沿中心路徑求解至對偶間隙低於 0.01 * tol_kkt

        Raises:
            SubproblemInfeasible: Phase I 找不到嚴格可行點
            NoConvergence: 置中階段超過步數上限，或牛頓步無法留在內部
        """
        prog = self.program
        x = self.interior_start(x0)
        used_phase_one = False
        if prog.m and np.max(self.scaled_violation(x)) >= -1e-12:
            x = self._phase_one(x)
            used_phase_one = True

        g0, _ = prog.objective_derivatives(x)
        scale = float(np.max(np.abs(g0 * self.D)[self.move])) if self.move.any() else 0.0
        if not scale > 0:
            scale = 1.0
        sigma = self.row_scales(x)

        def fun(z):
            g, H = prog.objective_derivatives(z)
            return prog.objective(z) / scale, g / scale, H / scale

        def cons(z):
            s = -(prog.rows(z) - prog.b) / sigma
            J = prog.row_jacobian(z) / sigma[:, None]
            return s, J, lambda wts: prog.row_hessian(z, wts / sigma)

        gap_target = 0.01 * self.tol_kkt
        x, tb, iters = self._path(fun, cons, x, prog.lo, prog.hi, self.move, self.D, gap_target)

        # 最後多做一步牛頓，得到原始-對偶修正後的乘子
        nt = self._newton_step(fun, cons, x, prog.lo, prog.hi, self.move, self.D, tb)
        s, J, dz = nt['s'], nt['J'], nt['dz']
        if prog.m:
            u = np.maximum((1.0 + (J @ dz) / s) / (tb * s), 0.0)
        else:
            u = np.zeros(0)
        dl = np.where(self.move, x - prog.lo, np.inf)
        du = np.where(self.move, prog.hi - x, np.inf)
        u_lo = np.where(self.move, np.maximum((1.0 - dz / dl) / (tb * dl), 0.0), 0.0)
        u_hi = np.where(self.move, np.maximum((1.0 + dz / du) / (tb * du), 0.0), 0.0)

        _, gs, _ = fun(x)
        r = (gs + J.T @ u - u_lo + u_hi) * self.D
        stationarity = float(np.max(np.abs(r[self.move]))) if self.move.any() else 0.0
        m_bar = prog.m + 2 * int(self.move.sum())
        kkt = max(stationarity, m_bar / tb)
        viol = self.scaled_violation(x) if prog.m else np.zeros(0)
        feas = float(max(0.0, np.max(viol))) if prog.m else 0.0

        return BarrierResult(
            x=x,
            row_duals=u * scale / sigma if prog.m else u,
            lo_duals=u_lo * scale,
            hi_duals=u_hi * scale,
            kkt_residual=kkt,
            feas_residual=feas,
            iterations=iters,
            used_phase_one=used_phase_one,
        )

    def _phase_one(self, x: np.ndarray) -> np.ndarray:
        """minimize s subject to 縮放後各列 <= s，盒約束保持嚴格"""
        prog = self.program
        sigma = self.row_scales(x)
        n = prog.n
        z = np.append(x, np.max(self.scaled_violation(x)) + 1.0)
        lo = np.append(prog.lo, -np.inf)
        hi = np.append(prog.hi, np.inf)
        move = np.append(self.move, True)
        D = np.append(self.D, 1.0)
        c = np.zeros(n + 1)
        c[-1] = 1.0
        zero_h = np.zeros((n + 1, n + 1))

        def fun(zz):
            return zz[-1], c, zero_h

        def cons(zz):
            xx = zz[:-1]
            s = -((prog.rows(xx) - prog.b) / sigma - zz[-1])
            J = np.hstack([prog.row_jacobian(xx) / sigma[:, None], -np.ones((prog.m, 1))])

            def hess(wts):
                H = np.zeros((n + 1, n + 1))
                H[:n, :n] = prog.row_hessian(xx, wts / sigma)
                return H
            return s, J, hess

        def deep(zz):
            return np.max(self.scaled_violation(zz[:-1])) < -self.PHASE_ONE_DEPTH

        try:
            z, _, _ = self._path(fun, cons, z, lo, hi, move, D, 1e-12, stop=deep)
        except NoConvergence as e:
            z = e.best
        # 區域太薄時接受任何嚴格內點
        viol = self.scaled_violation(z[:-1])
        if not np.max(viol) < -1e-10:
            worst = int(np.argmax(viol))
            raise SubproblemInfeasible(prog.labels[worst], float(max(0.0, viol[worst]) * sigma[worst]))
        return z[:-1]

    def _path(self, fun, cons, z, lo, hi, move, D, gap_target, stop=None):
        s, _, _ = cons(z)
        m_bar = len(s) + 2 * int((move & np.isfinite(lo)).sum())
        tb = 1.0
        total = 0
        while True:
            z, steps = self._center(fun, cons, z, lo, hi, move, D, tb, stop)
            total += steps
            if stop is not None and stop(z):
                break
            if m_bar / tb <= gap_target:
                break
            tb *= self.MU
        return z, tb, total

    def _newton_step(self, fun, cons, z, lo, hi, move, D, tb):
        boxed = move & np.isfinite(lo)
        idx = np.flatnonzero(move)
        _, g, H = fun(z)
        s, J, hess = cons(z)
        inv_s = 1.0 / s
        dl = z[boxed] - lo[boxed]
        du = hi[boxed] - z[boxed]

        grad = tb * g + J.T @ inv_s
        grad[boxed] += -1.0 / dl + 1.0 / du
        Hm = tb * H + J.T @ (J * inv_s[:, None] ** 2) + hess(inv_s)
        Hm[boxed, boxed] += 1.0 / dl**2 + 1.0 / du**2

        Dm = D[idx]
        Hr = Hm[np.ix_(idx, idx)] * np.outer(Dm, Dm)
        gr = grad[idx] * Dm
        dy = self._newton_direction(Hr, gr)
        dz = np.zeros_like(z)
        dz[idx] = Dm * dy
        return {'grad': grad, 'dz': dz, 'dec2': float(-gr @ dy), 's': s, 'J': J}

    def _center(self, fun, cons, z, lo, hi, move, D, tb, stop):
        boxed = move & np.isfinite(lo)

        def barrier(zz):
            f, _, _ = fun(zz)
            s, _, _ = cons(zz)
            return tb * f - np.sum(np.log(s)) - np.sum(np.log(zz[boxed] - lo[boxed])) - np.sum(np.log(hi[boxed] - zz[boxed]))

        def strictly_feasible(zz):
            # 先檢查盒約束: 各列只在盒內有定義
            if not (np.all(zz[boxed] > lo[boxed]) and np.all(zz[boxed] < hi[boxed])):
                return False
            s, _, _ = cons(zz)
            return bool(np.all(s > 0))

        prev_dec2 = np.inf
        for step in range(self.max_newton):
            nt = self._newton_step(fun, cons, z, lo, hi, move, D, tb)
            dec2, dz = nt['dec2'], nt['dz']
            if dec2 / 2.0 <= self.NEWTON_TOL:
                return z, step
            # 捨入下限: 牛頓減量在中心附近不再下降
            if dec2 <= 1e-8 and dec2 >= 0.5 * prev_dec2:
                return z, step
            prev_dec2 = dec2

            alpha = 1.0
            while not strictly_feasible(z + alpha * dz):
                alpha *= 0.5
                if alpha < 1e-20:
                    raise NoConvergence(
                        f"Newton step cannot stay strictly feasible (decrement^2 {dec2:.3e}, t={tb:.3e})",
                        best=z,
                    )
            if dec2 > 1e-6:
                phi0 = barrier(z)
                slope = float(nt['grad'] @ dz)
                while barrier(z + alpha * dz) > phi0 + self.ARMIJO * alpha * slope:
                    alpha *= 0.5
                    if alpha < 1e-12:
                        # 障礙值的捨入誤差蓋過下降量
                        return z, step
            z = z + alpha * dz
            if stop is not None and stop(z):
                return z, step + 1
        raise NoConvergence(f"barrier centering exceeded {self.max_newton} Newton steps", best=z)

    @staticmethod
    def _newton_direction(Hr: np.ndarray, gr: np.ndarray) -> np.ndarray:
        d = np.sqrt(np.maximum(np.abs(np.diag(Hr)), 1e-300))
        Hs = Hr / np.outer(d, d)
        try:
            y = np.linalg.solve(Hs, -gr / d)
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(Hs, -gr / d, rcond=None)[0]
        return y / d


# ===== P4 子問題 =====

@dataclass(frozen=True)
class SubproblemSpec:
    """
    固定 (lambda, beta) 與展開點時的凹極大化問題

    係數陣列皆為每個用戶一筆，對應 (t, f, N, tau, ptilde)。
    prox_t / prox_N 為 (t, N) 上的近端權重，零代表純一階展開。
    """
    params: SystemParams
    lam: np.ndarray
    beta: np.ndarray
    lin: LinearizationPoint
    a_t: np.ndarray
    a_f: np.ndarray
    a_N: np.ndarray
    a_tau: np.ndarray
    a_p: np.ndarray
    c_f3: np.ndarray
    obj_const: np.ndarray
    bits_rhs: np.ndarray
    entropy_weight: np.ndarray
    x0: np.ndarray
    B: float
    cccp: bool = False
    offload_only: bool = False
    t_floor: float = T_FLOOR
    prox_t: Optional[np.ndarray] = None
    prox_N: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.params.K

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.zeros(NVAR * self.K)
        hi = np.zeros(NVAR * self.K)
        for k, u in enumerate(self.params.users):
            lo[_ix(k, T_)] = self.t_floor
            hi[_ix(k, T_)] = self.params.T
            hi[_ix(k, F_)] = 0.0 if self.offload_only else u.f_max
            # N <= H ptilde <= H E_th，tau 會被壓到 G ptilde；上界只讓盒子有界
            hi[_ix(k, N_)] = 2.0 * u.H * u.E_th
            hi[_ix(k, TAU_)] = 2.0 * u.G * u.E_th
            hi[_ix(k, P_)] = u.E_th
        return lo, hi

    def to_program(self) -> ConvexProgram:
        """子問題的極小化形式，各列附標籤"""
        K, n = self.K, NVAR * self.K
        params = self.params
        c = np.zeros(n)
        q = np.zeros(n)
        obj_entropy = []
        rows_A, rows_kappa, rhs, labels, row_entropy = [], [], [], [], []

        def new_row(label: str, b: float):
            rows_A.append(np.zeros(n))
            rows_kappa.append(np.zeros(n))
            rhs.append(b)
            labels.append(label)
            return len(rhs) - 1

        for k, u in enumerate(params.users):
            it, i_f, iN, itau, ip = (_ix(k, j) for j in range(NVAR))
            c[it] = -self.a_t[k]
            c[i_f] = -self.a_f[k]
            c[iN] = -self.a_N[k]
            c[itau] = -self.a_tau[k]
            c[ip] = -self.a_p[k]
            q[i_f] = self.c_f3[k]
            if self.cccp and self.entropy_weight[k] > 0:
                obj_entropy.append((float(self.entropy_weight[k]), iN, it))

            # 總位元 >= L，寫成 <= 列
            r = new_row(f"bits[{k}]", float(self.bits_rhs[k]))
            lin = self.lin
            if self.cccp:
                rows_A[r][it] = self.B * lin.theta[k]
                rows_A[r][itau] = self.B * lin.dtau[k]
                row_entropy.append((r, self.B, iN, it))
            else:
                rows_A[r][it] = -self.B * (lin.v[k] - lin.theta[k])
                rows_A[r][iN] = -self.B * lin.dN[k]
                rows_A[r][itau] = self.B * lin.dtau[k]
            rows_A[r][i_f] = -params.T / u.C

            r = new_row(f"energy[{k}]", u.E_th)
            rows_A[r][ip] = 1.0
            rows_A[r][it] = params.p_r
            rows_kappa[r][i_f] = u.eps * params.T

            r = new_row(f"tau_lower[{k}]", 0.0)
            rows_A[r][ip] = u.G
            rows_A[r][itau] = -1.0

            r = new_row(f"N_upper[{k}]", 0.0)
            rows_A[r][iN] = 1.0
            rows_A[r][ip] = -u.H

        r = new_row("time", params.T)
        for k in range(K):
            rows_A[r][_ix(k, T_)] = 1.0

        prox = center = None
        if self.prox_t is not None and (np.any(self.prox_t > 0) or np.any(self.prox_N > 0)):
            prox = np.zeros(n)
            center = np.zeros(n)
            prox[T_::NVAR] = self.prox_t
            prox[N_::NVAR] = self.prox_N
            center[T_::NVAR] = self.lin.t0
            center[N_::NVAR] = self.lin.N0

        lo, hi = self.bounds()
        return ConvexProgram(
            c=c, q=q, obj_entropy=tuple(obj_entropy),
            A=np.array(rows_A), kappa=np.array(rows_kappa),
            row_entropy=tuple(row_entropy), b=np.array(rhs),
            lo=lo, hi=hi, labels=tuple(labels),
            const=-float(np.sum(self.obj_const)),
            prox=prox, center=center,
        )

    def objective_value(self, x: np.ndarray) -> float:
        """子問題目標值 (極大化方向)"""
        return -self.to_program().objective(x)


@dataclass(frozen=True)
class SubproblemSolution:
    point: DecisionPoint
    objective: float
    kkt_residual: float
    feas_residual: float
    iterations: int
    x: np.ndarray = field(repr=False)
    row_duals: np.ndarray = field(repr=False)
    used_phase_one: bool = False


def point_to_vector(point: DecisionPoint) -> np.ndarray:
    x = np.zeros(NVAR * point.K)
    for j, name in enumerate(VAR_NAMES):
        x[j::NVAR] = point.arr(name)
    return x


def vector_to_point(x: np.ndarray, params: SystemParams) -> DecisionPoint:
    f = np.maximum(x[F_::NVAR], 0.0)
    return DecisionPoint.from_arrays(
        t=x[T_::NVAR], f=f, m=offloaded_bits(f, params),
        ptilde=x[P_::NVAR], tau=x[TAU_::NVAR], N=x[N_::NVAR],
    )


def assemble_p4(
    params: SystemParams,
    aux: AuxiliaryState,
    lin: LinearizationPoint,
    start: Optional[DecisionPoint] = None,
    cccp: bool = False,
    offload_only: bool = False,
    B: Optional[float] = None,
    t_floor: float = T_FLOOR,
    prox_scale: float = 0.0,
) -> SubproblemSpec:
    """
    建立子問題係數

    Args:
        start: 暖啟動點（預設為展開點，ptilde = N/H）
        cccp: entropy(N, t) 保持精確，只線性化竊聽端的熵項
        offload_only: 所有用戶固定 f = 0
        B: 有效頻寬（以 2 為底時為 B/ln 2）
        prox_scale: 兩項皆線性化時，(t, N) 近端項相對於 entropy(N, t)
            局部曲率對角上界的倍數；0 即為原始一階展開
    """
    lam = np.array(aux.lam, dtype=float)
    beta = np.array(aux.beta, dtype=float)
    if len(lam) != params.K or lin.K != params.K:
        raise DomainError("aux, linearization and system must describe the same users")
    if np.any(lam <= 0):
        raise DomainError("lambda must be strictly positive")
    if prox_scale < 0:
        raise DomainError(f"prox_scale must be nonnegative, got {prox_scale}")
    bw = params.B if B is None else B
    w = params.vector('w')
    C = params.vector('C')
    eps = params.vector('eps')
    L = params.vector('L')
    T, p_r = params.T, params.p_r

    gain = lam * w * bw
    a_f = lam * w * T / C
    a_p = -lam * beta
    c_f3 = lam * beta * eps * T
    eave0 = lin.t0 * np.log1p(lin.tau0 / lin.t0)
    prox_t = prox_N = None
    if cccp:
        a_t = -gain * lin.theta - lam * beta * p_r
        a_N = np.zeros(params.K)
        a_tau = -gain * lin.dtau
        bits_const = lin.theta * lin.t0 + lin.dtau * lin.tau0 - eave0
        obj_const = gain * bits_const
        weight = gain
        bits_rhs = bw * bits_const - L
    else:
        a_t = gain * (lin.v - lin.theta) - lam * beta * p_r
        a_N = gain * lin.dN
        a_tau = -gain * lin.dtau
        bits_const = lin.phi - (lin.v - lin.theta) * lin.t0 - lin.dN * lin.N0 + lin.dtau * lin.tau0
        obj_const = gain * bits_const
        weight = np.zeros(params.K)
        # -B[(v-theta)t + dN N - dtau tau] - T f/C <= B const - L
        bits_rhs = bw * bits_const - L
        if prox_scale > 0:
            # -Hessian(entropy) = v v^T / (t (N+t)^2)，v = (t, -N)；2 diag(v^2) 為其上界
            s2 = (lin.N0 + lin.t0) ** 2
            prox_N = prox_scale * gain * 2.0 * lin.t0 / s2
            prox_t = prox_scale * gain * 2.0 * lin.N0**2 / (lin.t0 * s2)

    if start is None:
        H = params.vector('H')
        ptilde0 = np.where(H > 0, lin.N0 / H, 0.0)
        x0 = np.zeros(NVAR * params.K)
        x0[T_::NVAR] = lin.t0
        x0[N_::NVAR] = lin.N0
        x0[TAU_::NVAR] = lin.tau0
        x0[P_::NVAR] = ptilde0
    else:
        x0 = point_to_vector(start)

    return SubproblemSpec(
        params=params, lam=lam, beta=beta, lin=lin,
        a_t=a_t, a_f=a_f, a_N=a_N, a_tau=a_tau, a_p=a_p, c_f3=c_f3,
        obj_const=obj_const, bits_rhs=bits_rhs, entropy_weight=weight,
        x0=x0, B=bw, cccp=cccp, offload_only=offload_only, t_floor=t_floor,
        prox_t=prox_t, prox_N=prox_N,
    )


def shape_start(spec: SubproblemSpec, x: np.ndarray) -> np.ndarray:
    """
    把起始點移進盒約束、變換列與共用時限的內部

    每一項與邊界保持 START_INTERIOR 的相對距離；位元列與能量列若不滿足，
    由 Phase I 處理。
    """
    params = spec.params
    lo, hi = spec.bounds()
    move = lo < hi
    margin = BarrierSolver.INTERIOR_MARGIN * np.where(move, hi - lo, 1.0)
    x = np.where(move, np.clip(np.array(x, dtype=float), lo + margin, hi - margin), lo)

    t = x[T_::NVAR]
    room = (1.0 - START_INTERIOR) * params.T
    if t.sum() > room:
        spare = t - spec.t_floor
        t = spec.t_floor + spare * (room - params.K * spec.t_floor) / max(spare.sum(), 1e-300)
    x[T_::NVAR] = t

    H = params.vector('H')
    G = params.vector('G')
    E = params.vector('E_th')
    p = np.clip(x[P_::NVAR], START_INTERIOR * E, (1.0 - START_INTERIOR) * E)
    x[P_::NVAR] = p
    x[N_::NVAR] = np.clip(x[N_::NVAR], START_INTERIOR * H * p, (1.0 - START_INTERIOR) * H * p)
    x[TAU_::NVAR] = np.clip(x[TAU_::NVAR], (1.0 + START_INTERIOR) * G * p, 2.0 * G * E * (1.0 - START_INTERIOR))
    return x


def solve_p4(
    spec: SubproblemSpec,
    tol_kkt: float = 1e-8,
    tol_feas: float = 1e-9,
    max_iter: int = 200,
) -> SubproblemSolution:
    """
    以障礙法求子問題的全域最優解

    Raises:
        SubproblemInfeasible: Phase I 找不到嚴格可行點
        NoConvergence: 置中超過 max_iter 步、牛頓步離開內部，或最終 KKT /
            可行性殘差未達 tol_kkt / tol_feas；best 為最後的迭代點
    """
    program = spec.to_program()
    solver = BarrierSolver(program, tol_kkt=tol_kkt, tol_feas=tol_feas, max_newton=max_iter)
    try:
        res = solver.solve(shape_start(spec, spec.x0))
    except NoConvergence as e:
        if e.best is not None and len(e.best) == program.n:
            raise NoConvergence(str(e), best=vector_to_point(e.best, spec.params))
        raise
    if res.kkt_residual > tol_kkt or res.feas_residual > tol_feas:
        raise NoConvergence(
            f"subproblem stopped at KKT residual {res.kkt_residual:.3e} (tol {tol_kkt:.1e}), "
            f"feasibility {res.feas_residual:.3e} (tol {tol_feas:.1e})",
            best=vector_to_point(res.x, spec.params),
        )
    if res.used_phase_one:
        logger.debug("⚠️  subproblem start was infeasible; Phase I recovered a strict interior point")
    return SubproblemSolution(
        point=vector_to_point(res.x, spec.params),
        objective=-program.objective(res.x),
        kkt_residual=res.kkt_residual,
        feas_residual=res.feas_residual,
        iterations=res.iterations,
        x=res.x,
        row_duals=res.row_duals,
        used_phase_one=res.used_phase_one,
    )


# ===== KKT 驗證 =====

@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    complementarity: float
    dual_infeasibility: float
    multipliers: Dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity, self.dual_infeasibility)


ACTIVE_SLACK = 1e-2


def verify_kkt(spec: SubproblemSpec, sol: SubproblemSolution, active_slack: float = ACTIVE_SLACK) -> KktReport:
    """
    獨立的一階最優性驗證

    對正規化鬆弛量低於 active_slack 的約束以最小平方法重建乘子；
    出現負乘子的約束會被剔除後重新擬合。
    """
    program = spec.to_program()
    x = sol.x
    move = program.lo < program.hi
    D = np.where(move, program.hi - program.lo, 1.0)
    idx = np.flatnonzero(move)

    g0, _ = program.objective_derivatives(x)
    d0 = (g0 * D)[idx]
    obj_norm = float(np.max(np.abs(d0))) if len(d0) else 0.0
    if obj_norm > 0:
        d0 = d0 / obj_norm

    grads, slacks, labels = [], [], []
    J = program.row_jacobian(x)
    values = program.rows(x)
    for r in range(program.m):
        gr = (J[r] * D)[idx]
        norm = float(np.max(np.abs(gr)))
        if norm == 0:
            continue
        grads.append(gr / norm)
        slacks.append((program.b[r] - values[r]) / norm)
        labels.append(program.labels[r])
    for i in idx:
        k, j = divmod(int(i), NVAR)
        e = np.zeros(len(idx))
        pos = int(np.searchsorted(idx, i))
        e[pos] = -1.0
        grads.append(e.copy())
        slacks.append((x[i] - program.lo[i]) / D[i])
        labels.append(f"{VAR_NAMES[j]}[{k}]>=lo")
        e[pos] = 1.0
        grads.append(e)
        slacks.append((program.hi[i] - x[i]) / D[i])
        labels.append(f"{VAR_NAMES[j]}[{k}]<=hi")

    grads = np.array(grads)
    slacks = np.array(slacks)
    primal = float(max(0.0, -np.min(slacks))) if len(slacks) else 0.0

    active = np.flatnonzero(slacks <= active_slack)
    mu = np.zeros(len(slacks))
    for _ in range(len(active) + 1):
        if len(active) == 0:
            break
        sol_mu, *_ = np.linalg.lstsq(grads[active].T, -d0, rcond=None)
        if np.all(sol_mu >= -1e-12):
            mu[:] = 0.0
            mu[active] = sol_mu
            break
        active = active[sol_mu >= -1e-12] if np.any(sol_mu >= -1e-12) else active[:0]
        mu[:] = 0.0

    residual = d0 + grads.T @ mu if len(mu) else d0
    stationarity = float(np.max(np.abs(residual))) if len(residual) else 0.0
    complementarity = float(np.max(np.abs(mu) * np.maximum(slacks, 0.0))) if len(mu) else 0.0
    dual_infeasibility = float(max(0.0, -np.min(mu))) if len(mu) else 0.0
    return KktReport(
        stationarity=stationarity,
        primal=primal,
        complementarity=complementarity,
        dual_infeasibility=dual_infeasibility,
        multipliers={labels[i]: float(mu[i]) for i in range(len(labels))},
    )
