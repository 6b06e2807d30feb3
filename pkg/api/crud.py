import logging
from typing import Any, Dict, List

import pandas as pd

from api.storage import get_runs_dir, resolve_run
from meshfree.records import META_FILE, RECORDS_FILE, nodes_file, read_meta, read_nodes, read_records
from meshfree.schemas import IterationRecord

logger = logging.getLogger(__name__)


def list_runs() -> List[Dict[str, Any]]:
    """Every directory under the runs directory that holds a records file."""
    base = get_runs_dir()
    if not base.is_dir():
        return []
    runs = []
    for path in sorted(p for p in base.iterdir() if (p / RECORDS_FILE).is_file()):
        try:
            records = read_records(path)
            meta = read_meta(path) if (path / META_FILE).is_file() else None
        except Exception as e:
            logger.warning(f"Skipping unreadable run {path.name}: {e}", exc_info=True)
            continue
        errors = [r.einf for r in records if r.einf is not None]
        runs.append({
            "name": path.name,
            "problem": meta.problem if meta else None,
            "status": meta.status if meta else None,
            "iterations": len(records),
            "best_einf": min(errors) if errors else None,
        })
    return runs


def get_records(run: str) -> List[IterationRecord]:
    path = resolve_run(run)
    if not (path / RECORDS_FILE).is_file():
        raise FileNotFoundError(f"Run '{run}' has no records.")
    return read_records(path)


def get_nodes(run: str, iteration: int, limit: int) -> List[Dict[str, Any]]:
    path = resolve_run(run) / nodes_file(iteration)
    if not path.is_file():
        raise FileNotFoundError(f"Run '{run}' has no iteration {iteration}.")
    frame = read_nodes(path).head(limit)
    frame.insert(0, "node_id", frame.index)
    frame = frame.astype(object).where(pd.notna(frame), None)
    return frame.to_dict(orient="records")
