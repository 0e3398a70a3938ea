"""Line-buffered CSV metric logs with a fixed header per training mode."""

from __future__ import annotations

import csv
import math
import os
import time
from pathlib import Path
from typing import Callable

LOG_DIR_ENV = "SENTLM_LOG_DIR"

COLUMNS = {
    "svae": ("step", "lr", "loss", "grad_norm", "val_loss", "ppl", "wall_seconds"),
    "sllm": ("step", "lr", "loss", "recon_loss", "stop_loss", "grad_norm", "val_loss", "ppl", "wall_seconds"),
    "baseline": ("step", "lr", "loss", "grad_norm", "val_loss", "ppl", "wall_seconds"),
}


def log_dir(default="runs") -> Path:
    """The environment variable wins over the caller's default."""
    return Path(os.environ.get(LOG_DIR_ENV) or default)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        # repr round-trips exactly, so equal runs give equal bytes
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


class MetricsLog:
    def __init__(self, path, mode: str, clock: Callable[[], float] = time.perf_counter):
        if mode not in COLUMNS:
            raise ValueError(f"no column set for mode {mode!r}")
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = COLUMNS[mode]
        self._clock = clock
        self._start = clock()
        self._last_step: int | None = None
        self._fh = open(self.path, "w", newline="", encoding="utf-8", buffering=1)
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)

    def log(self, step: int, **fields) -> None:
        if self._last_step is not None and step <= self._last_step:
            raise ValueError(f"step {step} is not after {self._last_step}")
        unknown = set(fields) - set(self.columns)
        if unknown:
            raise ValueError(f"unknown metric columns: {sorted(unknown)}")
        fields["step"] = step
        fields["wall_seconds"] = self._clock() - self._start
        self._writer.writerow([_fmt(fields.get(c)) for c in self.columns])
        self._last_step = step

    def log_row(self, row: dict) -> None:
        """Log a training-loop row, keeping only known columns."""
        self.log(row["step"], **{k: v for k, v in row.items() if k in self.columns and k != "step"})

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path, drop=("wall_seconds",)) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: v for k, v in row.items() if k not in drop} for row in csv.DictReader(fh)]
