import os
import re
from pathlib import Path

from meshfree.config import RUNS_DIR

RUN_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class InvalidRunName(ValueError):
    pass


def get_runs_dir() -> Path:
    """Base directory holding one sub-directory per run; read on every call so it can be re-pointed."""
    return Path(os.getenv("HPADAPT_RUNS_DIR", RUNS_DIR)).resolve()


def resolve_run(name: str) -> Path:
    """Directory of the named run. Names that could leave the runs directory are rejected."""
    if not RUN_NAME.match(name) or ".." in name:
        raise InvalidRunName(f"Invalid run name '{name}'.")
    base = get_runs_dir()
    path = (base / name).resolve()
    if path.parent != base:
        raise InvalidRunName(f"Invalid run name '{name}'.")
    if not path.is_dir():
        raise FileNotFoundError(f"Run '{name}' not found.")
    return path
