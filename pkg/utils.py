"""
CAD Sequence Toolkit - Utility Functions
Logging, timing, seeding and file helpers shared by every module
"""

import os
import sys
import json
import time
import hashlib
import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pytz

_LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}

_log_settings = {
    "level": os.getenv("CADSEQ_LOG_LEVEL", "INFO").upper(),
    "to_file": False,
    "log_dir": os.getenv("CADSEQ_LOG_DIR", "logs"),
    "timezone": "UTC",
}


def configure_logging(level: str = "INFO", to_file: bool = False,
                      log_dir: str = "logs", timezone: str = "UTC") -> None:
    """Apply logging settings from the resolved configuration"""
    level = level.upper()
    if level not in _LEVELS:
        raise ValueError(f"Unknown log level '{level}', expected one of {list(_LEVELS)}")
    pytz.timezone(timezone)  # raises UnknownTimeZoneError early
    _log_settings.update({
        "level": level,
        "to_file": to_file,
        "log_dir": log_dir,
        "timezone": timezone,
    })


def _now() -> datetime.datetime:
    return datetime.datetime.now(pytz.timezone(_log_settings["timezone"]))


def logger(msg: str, level: str = "INFO") -> None:
    """Timestamped logging to the console and, when enabled, a daily log file"""
    level = level.upper()
    if _LEVELS.get(level, 20) < _LEVELS.get(_log_settings["level"], 20):
        return

    now = _now()
    full_msg = f"[{now.strftime('%H:%M:%S')}] {msg}"
    stream = sys.stderr if _LEVELS.get(level, 20) >= _LEVELS["WARNING"] else sys.stdout
    print(full_msg, file=stream)

    if not _log_settings["to_file"]:
        return
    try:
        ensure_log_directory()
        log_file = Path(_log_settings["log_dir"]) / f"cadseq_{now.strftime('%Y%m%d')}.log"
        with open(log_file, 'a', encoding='utf-8') as f:
            f.write(f"{full_msg}\n")
    except OSError as e:
        print(f"File logging failed: {str(e)}", file=sys.stderr)


def ensure_log_directory() -> bool:
    """Ensure log directory exists"""
    try:
        os.makedirs(_log_settings["log_dir"], exist_ok=True)
        return True
    except OSError as e:
        print(f"❌ Failed to create log directory: {str(e)}", file=sys.stderr)
        return False


def safe_divide(a: float, b: float, default: float = 0.0) -> float:
    """Safe division with default value"""
    if b == 0:
        return default
    return a / b


def derive_seed(base_seed: int, index: int) -> int:
    """Per-item seed: base seed XOR item index"""
    return (int(base_seed) ^ int(index)) & 0xFFFFFFFF


def canonical_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline"""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Union[str, Path], obj: Any) -> Path:
    """Write canonical JSON, creating parent directories"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def read_json(path: Union[str, Path]) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    """SHA-256 of a file, read in chunks"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def format_time_elapsed(seconds: float) -> str:
    """Format elapsed seconds as HH:MM:SS"""
    hours, remainder = divmod(int(seconds), 3600)
    minutes, secs = divmod(remainder, 60)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}"


class PerformanceTimer:
    """Simple performance timer"""

    def __init__(self, name: str = "Operation", level: str = "DEBUG"):
        self.name = name
        self.level = level
        self.start_time: Optional[float] = None
        self.elapsed = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = time.perf_counter() - self.start_time
        shown = f"{self.elapsed:.3f}s" if self.elapsed < 60 else format_time_elapsed(self.elapsed)
        logger(f"⏱️ {self.name} completed in {shown}", self.level)


def get_system_info() -> Dict[str, str]:
    """Get system information echoed into run summaries"""
    import platform

    return {
        "platform": platform.system(),
        "python_version": platform.python_version(),
        "machine": platform.machine(),
    }
