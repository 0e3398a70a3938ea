"""Configuration, seeding, checkpoints, metric logs, pipelines and the CLI."""

from .checkpoint import Checkpoint, load_checkpoint, read_header, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .metrics import MetricsLog, log_dir, read_log
from .seeding import component_int, component_rng, component_seed

__all__ = [
    "Checkpoint", "load_checkpoint", "read_header", "save_checkpoint",
    "RunConfig", "load_config", "parse_config",
    "MetricsLog", "log_dir", "read_log",
    "component_int", "component_rng", "component_seed",
]
