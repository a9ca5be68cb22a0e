"""Utterance- and system-level MSE / LCC / SRCC."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class CorrelationError(ValueError):
    """Correlation is undefined for the given inputs."""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"expected two 1-D vectors of equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise CorrelationError("correlation needs at least two points")
    return a, b


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.mean((a - b) ** 2))


def lcc(a, b) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise CorrelationError("correlation is undefined for a zero-variance vector")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def srcc(a, b) -> float:
    """Spearman rank correlation; tied values share their average rank."""
    a, b = _pair(a, b)
    return lcc(rankdata(a), rankdata(b))


def system_aggregate(per_utterance: Mapping[str, float], system_map: Mapping[str, str]) -> dict[str, float]:
    groups: dict[str, list[float]] = defaultdict(list)
    for sid, value in per_utterance.items():
        if sid not in system_map:
            raise KeyError(f"sample {sid!r} has no system")
        groups[system_map[sid]].append(value)
    return {sys_id: float(np.mean(v)) for sys_id, v in groups.items()}


@dataclass(frozen=True)
class LevelMetrics:
    mse: float
    lcc: float
    srcc: float


@dataclass(frozen=True)
class EvalReport:
    utterance: LevelMetrics
    system: LevelMetrics
    n_utterances: int
    n_systems: int

    def flat(self) -> dict[str, float]:
        out = {}
        for level in ("utterance", "system"):
            for k, v in asdict(getattr(self, level)).items():
                out[f"{level}.{k}"] = v
        out["n_utterances"] = self.n_utterances
        out["n_systems"] = self.n_systems
        return out

    @classmethod
    def from_flat(cls, d: Mapping[str, float]) -> "EvalReport":
        levels = {
            level: LevelMetrics(*(float(d[f"{level}.{f.name}"]) for f in fields(LevelMetrics)))
            for level in ("utterance", "system")
        }
        return cls(levels["utterance"], levels["system"], int(float(d["n_utterances"])), int(float(d["n_systems"])))

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.flat().items())

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        d = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                d[k.strip()] = v.strip()
        return cls.from_flat(d)

    def summary(self) -> str:
        u, s = self.utterance, self.system
        return (f"utt MSE {u.mse:.3f} LCC {u.lcc:.3f} SRCC {u.srcc:.3f} | "
                f"sys MSE {s.mse:.3f} LCC {s.lcc:.3f} SRCC {s.srcc:.3f}")


def _level(pred: Sequence[float], true: Sequence[float], strict: bool) -> LevelMetrics:
    values = [mse(pred, true)]
    for fn in (lcc, srcc):
        try:
            values.append(fn(pred, true))
        except CorrelationError as exc:
            if strict:
                raise
            logger.warning("%s undefined (%s); reporting NaN", fn.__name__, exc)
            values.append(float("nan"))
    return LevelMetrics(*values)


def evaluate(predictions: Mapping[str, float], true_means: Mapping[str, float],
             system_map: Mapping[str, str], strict: bool = False) -> EvalReport:
    """Compare predictions with true mean scores for every sample in ``true_means``.

    Undefined correlations (constant predictions, a single system) become NaN
    unless ``strict``, in which case CorrelationError propagates.
    """
    missing = sorted(set(true_means) - set(predictions))
    if missing:
        raise KeyError(f"missing predictions for: {', '.join(missing[:20])}")
    ids = sorted(true_means)
    pred = {sid: float(predictions[sid]) for sid in ids}
    true = {sid: float(true_means[sid]) for sid in ids}
    sys_pred = system_aggregate(pred, system_map)
    sys_true = system_aggregate(true, system_map)
    systems = sorted(sys_true)
    return EvalReport(
        utterance=_level([pred[i] for i in ids], [true[i] for i in ids], strict),
        system=_level([sys_pred[s] for s in systems], [sys_true[s] for s in systems], strict),
        n_utterances=len(ids),
        n_systems=len(systems),
    )


def evaluate_split(predictions: Mapping[str, float], dataset, split: str = "test", strict: bool = False) -> EvalReport:
    samples = dataset.split(split)
    means = {s.sample_id: dataset.mean_scores[s.sample_id] for s in samples}
    return evaluate(predictions, means, dataset.system_map(), strict)


def aggregate_seeds(reports: Sequence[EvalReport]) -> EvalReport:
    """Fieldwise arithmetic mean of several reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    flats = [r.flat() for r in reports]
    mean = {k: float(np.mean([f[k] for f in flats])) for k in flats[0]}
    return EvalReport.from_flat(mean)


def write_report_rows(path, rows: Iterable[tuple[Mapping[str, object], EvalReport]]):
    """Write one CSV row per report, tag columns first (e.g. seed, mode)."""
    rows = list(rows)
    path = Path(path)
    tag_keys = list(dict.fromkeys(k for tags, _ in rows for k in tags))
    metric_keys = list(EvalReport(LevelMetrics(0, 0, 0), LevelMetrics(0, 0, 0), 0, 0).flat())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(tag_keys + metric_keys)
        for tags, report in rows:
            flat = report.flat()
            w.writerow([tags.get(k, "") for k in tag_keys] + [flat[k] for k in metric_keys])


def read_report_rows(path) -> list[tuple[dict[str, str], EvalReport]]:
    out = []
    metric_keys = set(EvalReport(LevelMetrics(0, 0, 0), LevelMetrics(0, 0, 0), 0, 0).flat())
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tags = {k: v for k, v in row.items() if k not in metric_keys}
            out.append((tags, EvalReport.from_flat(row)))
    return out
