# errors.py

from typing import Any, Optional


class SecureCEError(Exception):
    """最佳化器所有例外的基底類別"""


class ConfigError(SecureCEError):
    """設定檔、命令列參數或環境變數錯誤"""


class DomainError(SecureCEError, ValueError):
    """引數超出運算的數學定義域"""


class InconsistencyError(SecureCEError):
    """內部狀態不一致，例如零能耗卻有正位元數"""


class ExpansionError(SecureCEError):
    """在不大於下限的卸載時間上要求線性化"""

    def __init__(self, user: int, t: float, t_floor: float):
        self.user = user
        self.t = t
        self.t_floor = t_floor
        super().__init__(
            f"cannot linearize user {user}: t={t:.3e} s is at or below floor {t_floor:.1e} s"
        )


class SubproblemInfeasible(SecureCEError):
    """Phase I 找不到嚴格可行點；row 為違反最多的約束列"""

    def __init__(self, row: str, violation: float):
        self.row = row
        self.violation = violation
        super().__init__(f"subproblem infeasible: row '{row}' violated by {violation:.3e}")


class NoConvergence(SecureCEError):
    """迭代預算用盡或未達容差；best 為目前最佳迭代點"""

    def __init__(self, message: str, best: Optional[Any] = None):
        self.best = best
        super().__init__(message)


class StallError(SecureCEError):
    """回溯步長都無法降低殘差範數"""

    def __init__(self, old_norm: float, new_norm: float):
        self.old_norm = old_norm
        self.new_norm = new_norm
        super().__init__(
            f"auxiliary update stalled: ||T|| {old_norm:.6e} -> best candidate {new_norm:.6e}"
        )


class InfeasibleInstance(SecureCEError):
    """某用戶的任務無法完成；max_bits 為憑證"""

    def __init__(self, user: int, required_bits: float, max_bits: float):
        self.user = user
        self.required_bits = required_bits
        self.max_bits = max_bits
        super().__init__(
            f"user {user} needs {required_bits:.6e} bits but at most {max_bits:.6e} are achievable"
        )
