"""CSV and JSON result emitters"""

import csv
import json
import os
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from ..core.federation import RunLog


def format_float(value: float) -> str:
    """17 significant digits: enough to round-trip any float64"""
    return f"{float(value):.17g}"


def participant_labels(n: int) -> List[str]:
    return [f"participant_{i}" for i in range(n)]


def class_labels(num_classes: int) -> List[str]:
    return [f"class_{j}" for j in range(num_classes)]


def to_jsonable(value: Any) -> Any:
    """numpy arrays and scalars -> plain lists, floats and ints"""
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()] if value.ndim else to_jsonable(value.item())
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


class ResultWriter:
    """Writes run artifacts into one output directory"""

    def __init__(self, directory: str):
        self.directory = directory
        self.written: List[str] = []
        os.makedirs(directory, exist_ok=True)

    def _path(self, filename: str) -> str:
        return os.path.join(self.directory, filename)

    def _write_rows(self, filename: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        path = self._path(filename)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
        self.written.append(path)
        return path

    def _write_json(self, filename: str, payload: Dict[str, Any]) -> str:
        path = self._path(filename)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(to_jsonable(payload), f, indent=2, allow_nan=False)
            f.write("\n")
        self.written.append(path)
        return path

    def write_metrics(self, log: RunLog) -> str:
        """One row per round: accuracies of the global, delivered and local models plus both gamma vectors"""
        n = len(log.final_acc)
        labels = participant_labels(n)
        header = (["t", "global_balanced_acc"]
                  + [f"acc_{p}" for p in labels]
                  + [f"gamma_{p}" for p in labels]
                  + [f"gamma_norm_{p}" for p in labels]
                  + [f"local_acc_{p}" for p in labels])
        rows = []
        for record in log.records:
            rows.append(
                [record.t, format_float(record.global_balanced_acc)]
                + [format_float(v) for v in record.participant_balanced_acc]
                + [format_float(v) for v in record.gamma_raw]
                + [format_float(v) for v in record.gamma_norm]
                + [format_float(v) for v in record.participant_local_acc]
            )
        return self._write_rows(f"metrics_{log.strategy}.csv", header, rows)

    def write_gamma(self, log: RunLog) -> str:
        """Final smoothed contribution matrix, row-major, with axis labels"""
        matrix = log.records[-1].gamma_matrix
        return self._write_json(f"gamma_{log.strategy}.json", {
            "strategy": log.strategy,
            "participants": participant_labels(matrix.shape[0]),
            "classes": class_labels(matrix.shape[1]),
            "gamma": matrix,
        })

    def write_fairness(self, logs: Sequence[RunLog]) -> str:
        """Pearson r of standalone accuracy against delivered-model and local-model accuracy"""
        header = ["strategy", "pearson_r", "degenerate", "local_pearson_r", "local_degenerate"]
        rows = [[log.strategy,
                 format_float(log.fairness.r), str(log.fairness.degenerate).lower(),
                 format_float(log.local_fairness.r), str(log.local_fairness.degenerate).lower()]
                for log in logs]
        return self._write_rows("fairness.csv", header, rows)

    def write_partition(self, counts: np.ndarray) -> str:
        """n x M table of per-participant class counts"""
        header = ["participant"] + class_labels(counts.shape[1])
        rows = [[i] + [int(c) for c in row] for i, row in enumerate(counts)]
        return self._write_rows("partition.csv", header, rows)

    def write_audit(self, payload: Dict[str, Any]) -> str:
        return self._write_json("audit.json", payload)
