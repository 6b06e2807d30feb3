import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from meshfree.nodegen import NodeSet
from meshfree.schemas import IterationRecord, RunMeta, StudyRow
from meshfree.system import SparseSystem, dump_matrix

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.csv"
META_FILE = "meta.json"
STUDY_FILE = "study.csv"
STUDY_SUMMARY_FILE = "study_summary.csv"
FLOAT_FORMAT = "%.17g"
COORDINATES = ("x", "y", "z")
NODE_COLUMNS = ("type", "h", "m", "eta")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def nodes_file(iteration: int) -> str:
    return f"nodes_{iteration}.csv"


def indicator_file(iteration: int) -> str:
    return f"indicator_{iteration}.csv"


class RunRecorder:
    """
    Owns one run directory. Records are appended and flushed after every
    iteration so an aborted run leaves a readable partial history.
    """

    def __init__(self, out_dir, problem: str, seed: int, config: Optional[dict] = None):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.records_path = self.out_dir / RECORDS_FILE
        if self.records_path.exists():
            logger.warning(f"Overwriting previous records in {self.records_path}.")
            self.records_path.unlink()
        self.meta = RunMeta(problem=problem, seed=seed, started=_now(), config=config or {})
        self._write_meta()

    def _write_meta(self):
        with open(self.out_dir / META_FILE, "w", encoding="utf-8") as f:
            json.dump(self.meta.model_dump(), f, indent=2, default=str)

    def append(self, record: IterationRecord) -> None:
        frame = pd.DataFrame([record.model_dump()], columns=list(IterationRecord.model_fields))
        header = not self.records_path.exists()
        with open(self.records_path, "a", encoding="utf-8", newline="") as f:
            frame.to_csv(f, header=header, index=False, float_format=FLOAT_FORMAT)
            f.flush()
            os.fsync(f.fileno())
        logger.debug(f"Appended iteration {record.iteration} to {self.records_path}.")

    def write_nodes(self, iteration: int, nodes: NodeSet, eta: np.ndarray) -> Path:
        data = {axis: nodes.positions[:, a] for a, axis in enumerate(COORDINATES[:nodes.dimension])}
        data.update(type=nodes.types.astype(int), h=nodes.h, m=nodes.m.astype(int), eta=np.asarray(eta, dtype=float))
        path = self.out_dir / nodes_file(iteration)
        pd.DataFrame(data).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def write_indicator(self, iteration: int, eta: np.ndarray) -> Path:
        eta = np.asarray(eta, dtype=float)
        frame = pd.DataFrame({"iter": iteration, "node_id": np.arange(len(eta)), "eta": eta})
        path = self.out_dir / indicator_file(iteration)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path

    def write_matrix(self, iteration: int, system: SparseSystem) -> Path:
        path = self.out_dir / f"matrix_{iteration}.txt"
        dump_matrix(system, path)
        return path

    def write_study(self, rows: Iterable[StudyRow]) -> pd.DataFrame:
        """Write every study cell and the per-(h, m) medians; returns the medians."""
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=list(StudyRow.model_fields))
        frame.to_csv(self.out_dir / STUDY_FILE, index=False, float_format=FLOAT_FORMAT)
        ok = frame[~frame["failed"].astype(bool)]
        summary = (ok.groupby(["h", "m"], as_index=False)[["n_nodes", "einf", "eta_max"]].median()
                   if not ok.empty else pd.DataFrame(columns=["h", "m", "n_nodes", "einf", "eta_max"]))
        summary.to_csv(self.out_dir / STUDY_SUMMARY_FILE, index=False, float_format=FLOAT_FORMAT)
        return summary

    def finish(self, status: str, error: Optional[str] = None) -> None:
        self.meta.finished = _now()
        self.meta.status = status
        self.meta.error = error
        self._write_meta()


def _optional(value):
    if pd.isna(value):
        return None
    return value.item() if isinstance(value, np.generic) else value


def read_records(path) -> List[IterationRecord]:
    """Parse a records.csv (or the run directory holding one) back into validated records."""
    path = Path(path)
    if path.is_dir():
        path = path / RECORDS_FILE
    frame = pd.read_csv(path, float_precision="round_trip")
    return [IterationRecord(**{k: _optional(v) for k, v in row.items()}) for row in frame.to_dict(orient="records")]


def read_nodes(path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    coords = [c for c in COORDINATES if c in frame.columns]
    missing = [c for c in NODE_COLUMNS if c not in frame.columns]
    if len(coords) < 2 or missing:
        raise ValueError(f"{path} is not a node file (columns {list(frame.columns)}).")
    return frame


def read_indicator(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def read_meta(path) -> RunMeta:
    path = Path(path)
    if path.is_dir():
        path = path / META_FILE
    with open(path, encoding="utf-8") as f:
        return RunMeta(**json.load(f))
