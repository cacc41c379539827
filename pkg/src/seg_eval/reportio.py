"""On-disk formats: the per-subject result CSV, evaluation manifests,
and the JSON report bodies.

The result CSV schema is frozen; tools downstream key on these exact
column names. Missing metric values are written as empty fields, never
as sentinels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParseError
from .metrics import MetricVector
from .ranking import InterscannerResult, RankTable, ResultTable, SubjectResult

__all__ = [
    "RESULT_COLUMNS",
    "MANIFEST_COLUMNS",
    "ManifestRow",
    "write_result_csv",
    "read_result_csv",
    "read_manifest",
    "metric_report",
    "rank_report",
    "write_rank_csv",
    "dump_json",
]

SCHEMA_VERSION = 1

RESULT_COLUMNS = (
    "method_id", "subject_id", "scanner_id",
    "dsc", "h95_mm", "avd_pct", "lavd", "recall", "f1",
    "recall_small", "recall_large",
    "n_ref_lesions", "ref_volume_ml", "pred_volume_ml",
)

MANIFEST_COLUMNS = ("method_id", "subject_id", "scanner_id",
                    "reference_path", "prediction_path")

_FLOAT_FIELDS = ("dsc", "h95_mm", "avd_pct", "lavd", "recall", "f1",
                 "recall_small", "recall_large",
                 "ref_volume_ml", "pred_volume_ml")
_REQUIRED_FIELDS = ("dsc", "recall", "f1")


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_result_csv(records: list[SubjectResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            m = rec.metrics
            writer.writerow([
                rec.method_id, rec.subject_id, rec.scanner_id,
                _fmt(m.dsc), _fmt(m.h95_mm), _fmt(m.avd_pct), _fmt(m.lavd),
                _fmt(m.recall), _fmt(m.f1),
                _fmt(m.recall_small), _fmt(m.recall_large),
                _fmt(m.n_ref_lesions), _fmt(m.ref_volume_ml),
                _fmt(m.pred_volume_ml),
            ])


def _parse_float(cell: str, row: int, column: str) -> float | None:
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {column}: "
                         f"cannot parse {cell!r} as a number",
                         row=row, column=column) from None


def _parse_int(cell: str, row: int, column: str) -> int | None:
    if cell == "":
        return None
    try:
        return int(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {column}: "
                         f"cannot parse {cell!r} as an integer",
                         row=row, column=column) from None


def read_result_csv(path: str | Path) -> ResultTable:
    """Load a result CSV back into a table, validating the header and
    every cell."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        if tuple(header) != RESULT_COLUMNS:
            raise ParseError(f"{path}: unexpected header {header}", row=1)
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(RESULT_COLUMNS):
                raise ParseError(f"{path}: row {lineno} has {len(cells)} "
                                 f"cells, expected {len(RESULT_COLUMNS)}",
                                 row=lineno)
            row = dict(zip(RESULT_COLUMNS, cells))
            values: dict[str, float | int | None] = {}
            for name in _FLOAT_FIELDS:
                values[name] = _parse_float(row[name], lineno, name)
            values["n_ref_lesions"] = _parse_int(
                row["n_ref_lesions"], lineno, "n_ref_lesions")
            for name in _REQUIRED_FIELDS:
                if values[name] is None:
                    raise ParseError(
                        f"row {lineno}: column {name} must not be empty",
                        row=lineno, column=name)
            records.append(SubjectResult(
                method_id=row["method_id"], subject_id=row["subject_id"],
                scanner_id=row["scanner_id"],
                metrics=MetricVector(
                    dsc=values["dsc"], h95_mm=values["h95_mm"],
                    avd_pct=values["avd_pct"], lavd=values["lavd"],
                    recall=values["recall"], f1=values["f1"],
                    recall_small=values["recall_small"],
                    recall_large=values["recall_large"],
                    n_ref_lesions=values["n_ref_lesions"],
                    ref_volume_ml=values["ref_volume_ml"],
                    pred_volume_ml=values["pred_volume_ml"])))
    return ResultTable(records)


@dataclass(frozen=True)
class ManifestRow:
    method_id: str
    subject_id: str
    scanner_id: str
    reference_path: Path
    prediction_path: Path


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """Read an evaluation manifest; relative paths resolve against the
    manifest's own directory."""
    path = Path(path)
    base = path.parent
    rows = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty manifest", row=1) from None
        if tuple(header) != MANIFEST_COLUMNS:
            raise ParseError(f"{path}: unexpected header {header}", row=1)
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(MANIFEST_COLUMNS):
                raise ParseError(f"{path}: row {lineno} has {len(cells)} "
                                 f"cells, expected {len(MANIFEST_COLUMNS)}",
                                 row=lineno)
            method, subject, scanner, ref, pred = cells
            if not ref or not pred:
                raise ParseError(f"{path}: row {lineno} has an empty path",
                                 row=lineno)
            key = (method, subject)
            if key in seen:
                raise ParseError(
                    f"{path}: duplicate (method, subject) {key} "
                    f"at row {lineno}", row=lineno)
            seen.add(key)
            rows.append(ManifestRow(
                method_id=method, subject_id=subject, scanner_id=scanner,
                reference_path=base / ref, prediction_path=base / pred))
    if not rows:
        raise ParseError(f"{path}: manifest has a header but no rows", row=1)
    return rows


def _jsonable(value):
    if value is None or isinstance(value, (str, int, bool)):
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    raise TypeError(f"cannot serialise {type(value)!r}")


def _envelope(config: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "seg-eval", "version": __version__},
        "config": _jsonable(config),
    }


def metric_report(vector: MetricVector, config: dict) -> dict:
    body = _envelope(config)
    body["metrics"] = _jsonable(vector.as_dict())
    return body


def rank_report(rank: RankTable, config: dict,
                interscanner: InterscannerResult | None = None) -> dict:
    body = _envelope(config)
    methods = []
    for i, name in enumerate(rank.methods):
        entry = {
            "method_id": name,
            "position": rank.positions[i],
            "final_rank": float(rank.final[i]),
            "metric_ranks": {k: float(v[i])
                             for k, v in rank.metric_ranks.items()},
            "means": {k: _jsonable(v[i]) for k, v in rank.means.items()},
            "counts": {k: int(v[i]) for k, v in rank.counts.items()},
        }
        if rank.final_ci is not None:
            entry["final_rank_ci"] = [float(rank.final_ci[i, 0]),
                                      float(rank.final_ci[i, 1])]
            entry["mean_ci"] = {k: [float(v[i, 0]), float(v[i, 1])]
                                for k, v in rank.mean_ci.items()}
        methods.append(entry)
    body["volume_metric"] = rank.volume_metric
    body["methods"] = methods
    body["cluster_boundaries"] = (list(rank.cluster_boundaries)
                                  if rank.cluster_boundaries is not None
                                  else None)
    if rank.bootstrap is not None:
        body["bootstrap"] = {
            "replicates": rank.bootstrap.replicates,
            "seed": rank.bootstrap.seed,
            "confidence": rank.bootstrap.confidence,
            "redraws": rank.redraws,
        }
    if interscanner is not None:
        body["interscanner"] = {
            "normalization": interscanner.normalization,
            "methods": [
                {"method_id": m,
                 "robustness": float(interscanner.robustness[i]),
                 "dispersions": {k: float(v[i]) for k, v
                                 in interscanner.dispersions.items()}}
                for i, m in enumerate(interscanner.methods)],
        }
    return body


def write_rank_csv(rank: RankTable, path: str | Path) -> None:
    metrics = sorted(rank.metric_ranks)
    header = ["method_id", "position", "final_rank", "final_ci_low",
              "final_ci_high"]
    for name in metrics:
        header += [f"mean_{name}", f"rank_{name}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, m in enumerate(rank.methods):
            row = [m, rank.positions[i], repr(float(rank.final[i]))]
            if rank.final_ci is not None:
                row += [repr(float(rank.final_ci[i, 0])),
                        repr(float(rank.final_ci[i, 1]))]
            else:
                row += ["", ""]
            for name in metrics:
                row += [repr(float(rank.means[name][i])),
                        repr(float(rank.metric_ranks[name][i]))]
            writer.writerow(row)


def dump_json(body: dict, path: str | Path | None) -> str:
    text = json.dumps(body, indent=2, sort_keys=False)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
