import os

from dotenv import load_dotenv

# Load environment variables (a local .env file may override numeric limits)
load_dotenv()

TOOL_VERSION = "0.3.0"


def _float_env(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


def _int_env(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


# Special-function limits
ML_MAX_ABS_Z = _float_env("HILFER_KIT_ML_MAX_Z", 50.0)
ML_MAX_TERMS = _int_env("HILFER_KIT_ML_MAX_TERMS", 6000)
WRIGHT_THETA_MAX = _float_env("HILFER_KIT_WRIGHT_THETA_MAX", 30.0)
WRIGHT_MAX_TERMS = _int_env("HILFER_KIT_WRIGHT_MAX_TERMS", 400)
GAMMA_MAX_ARG = _float_env("HILFER_KIT_GAMMA_MAX", 171.6)

# Validation
VALIDATION_SEED = _int_env("HILFER_KIT_VALIDATION_SEED", 0)
AUDIT_PAIRS = _int_env("HILFER_KIT_AUDIT_PAIRS", 10_000)

LOG_LEVEL = os.getenv("HILFER_KIT_LOG_LEVEL", "WARNING")


def worker_threads() -> int:
    """Worker pool size for independent instances; read on every call."""
    requested = os.getenv("HILFER_KIT_THREADS")
    if requested:
        return max(1, int(requested))
    return os.cpu_count() or 1
