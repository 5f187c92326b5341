# config.py

import logging
import os

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()


# ===== 預設數值 =====

# 卸載時的電路功率；參考場景沒有給定數值，此為本專案的選擇
DEFAULT_CIRCUIT_POWER_W = 0.1

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def _env_int(name: str, default: int, minimum: int = 1) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}")
    if not (value > 0 and value < 1e-3):
        raise ConfigError(f"{name} must lie in (0, 1e-3), got {value}")
    return value


LOG_LEVEL = os.getenv('SECURE_CE_LOG_LEVEL', 'INFO').upper()
MAX_WORKERS = _env_int('SECURE_CE_MAX_WORKERS', 1)
T_FLOOR = _env_float('SECURE_CE_T_FLOOR', 1e-9)


def setup_logging(level: str | None = None) -> None:
    """
    命令列執行時設定根 logger

    函式庫模組只呼叫 logging.getLogger(__name__)
    """
    chosen = (level or LOG_LEVEL).upper()
    numeric = getattr(logging, chosen, None)
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level: {chosen}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
