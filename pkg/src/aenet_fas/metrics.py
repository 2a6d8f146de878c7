"""Presentation-attack-detection metrics.

Spoof is the positive class. A record is classified spoof (Res = 1) when
its score is >= the threshold. With that convention:

* APCER / FAR: fraction of spoof records classified live
* BPCER / FRR: fraction of live records classified spoof
* FPR (for Recall@FPR): same as BPCER; recall is 1 - APCER

Metrics whose denominator would be empty raise ``UndefinedMetricError``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from aenet_fas.datamodel import CELEBA_ATTRIBUTES, SpoofType, attribute_index
from aenet_fas.errors import UndefinedMetricError
from aenet_fas.scoring import ScoreRecord

FPR_TARGETS = (0.01, 0.005, 0.001)


def _arrays(records: Sequence[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.fromiter((r.spoof_score for r in records), dtype=np.float64)
    spoof = np.fromiter((r.is_spoof for r in records), dtype=bool)
    return scores, spoof


def _both_classes(spoof: np.ndarray, what: str) -> None:
    if spoof.all() or not spoof.any():
        raise UndefinedMetricError(f"{what} needs both live and spoof records")


def average_error(apcer_value: float, bpcer_value: float) -> float:
    return (apcer_value + bpcer_value) / 2.0


def apcer(records: Sequence[ScoreRecord], threshold: float, by_type: SpoofType | str | None = None) -> float:
    """Fraction of spoof records (optionally of one micro type) classified live."""
    pool = [r for r in records if r.is_spoof]
    if by_type is not None:
        by_type = SpoofType(by_type)
        pool = [r for r in pool if r.spoof_type is by_type]
    if not pool:
        what = f"spoof type {by_type.value}" if by_type is not None else "spoof"
        raise UndefinedMetricError(f"APCER undefined: no {what} records")
    return sum(r.spoof_score < threshold for r in pool) / len(pool)


def bpcer(records: Sequence[ScoreRecord], threshold: float, by_attribute: int | str | None = None) -> float:
    """Fraction of live records (optionally with one face attribute) classified spoof."""
    pool = [r for r in records if not r.is_spoof]
    if by_attribute is not None:
        idx = attribute_index(by_attribute)
        if any(r.face_attributes is None for r in pool):
            raise ValueError("per-attribute BPCER needs face_attributes on every live record")
        pool = [r for r in pool if r.face_attributes[idx] == 1]
    if not pool:
        what = f"live records with {by_attribute}" if by_attribute is not None else "live records"
        raise UndefinedMetricError(f"BPCER undefined: no {what}")
    return sum(r.spoof_score >= threshold for r in pool) / len(pool)


def far_frr(records: Sequence[ScoreRecord], threshold: float) -> tuple[float, float]:
    return apcer(records, threshold), bpcer(records, threshold)


def _candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    # every distinct score plus the boundary above the maximum (all live)
    return np.append(np.unique(scores), np.inf)


class EerResult(NamedTuple):
    eer: float
    threshold: float


def eer(records: Sequence[ScoreRecord]) -> EerResult:
    """Equal error rate over the observed score thresholds.

    Picks the candidate threshold with the smallest |FAR - FRR| (first, i.e.
    lowest, on ties) and reports (FAR + FRR) / 2 there. No interpolation.
    """
    scores, spoof = _arrays(records)
    _both_classes(spoof, "EER")
    taus = _candidate_thresholds(scores)
    s_sorted = np.sort(scores[spoof])
    l_sorted = np.sort(scores[~spoof])
    n_s, n_l = len(s_sorted), len(l_sorted)
    missed = np.searchsorted(s_sorted, taus, side="left")  # spoof with score < tau
    rejected = n_l - np.searchsorted(l_sorted, taus, side="left")  # live with score >= tau
    # integer cross-multiplication keeps tie detection exact
    gap = np.abs(missed * n_l - rejected * n_s)
    k = int(np.argmin(gap))
    rate = (missed[k] / n_s + rejected[k] / n_l) / 2.0
    return EerResult(float(rate), float(taus[k]))


class AcerResult(NamedTuple):
    acer: float
    apcer: float
    bpcer: float
    threshold: float


def acer(records: Sequence[ScoreRecord]) -> AcerResult:
    """APCER, BPCER and their mean at the EER threshold of ``records``."""
    _, tau = eer(records)
    a = apcer(records, tau)
    b = bpcer(records, tau)
    return AcerResult(average_error(a, b), a, b, tau)


def auc(records: Sequence[ScoreRecord]) -> float:
    """P(random spoof outscores random live), ties counted one half."""
    scores, spoof = _arrays(records)
    _both_classes(spoof, "AUC")
    ranks = rankdata(scores, method="average")
    n_s = int(spoof.sum())
    n_l = len(scores) - n_s
    u = ranks[spoof].sum() - n_s * (n_s + 1) / 2.0
    return float(u / (n_s * n_l))


@dataclass(frozen=True)
class RecallPoint:
    recall: float
    threshold: float
    fpr: float
    coarse: bool  # target finer than 1 / n_live: only FPR 0 qualifies


def recall_at_fpr(
    records: Sequence[ScoreRecord], fpr_targets: Iterable[float] = FPR_TARGETS
) -> dict[float, RecallPoint]:
    """Spoof recall at the lowest threshold whose live FPR is <= each target."""
    scores, spoof = _arrays(records)
    _both_classes(spoof, "Recall@FPR")
    taus = _candidate_thresholds(scores)
    s_sorted = np.sort(scores[spoof])
    l_sorted = np.sort(scores[~spoof])
    n_s, n_l = len(s_sorted), len(l_sorted)
    fpr = (n_l - np.searchsorted(l_sorted, taus, side="left")) / n_l
    recall = (n_s - np.searchsorted(s_sorted, taus, side="left")) / n_s
    out = {}
    for target in fpr_targets:
        if not 0.0 <= target <= 1.0:
            raise ValueError(f"FPR target must lie in [0, 1], got {target}")
        k = int(np.flatnonzero(fpr <= target)[0])  # the inf boundary always qualifies
        out[target] = RecallPoint(
            recall=float(recall[k]),
            threshold=float(taus[k]),
            fpr=float(fpr[k]),
            coarse=bool(n_l * target < 1.0 and target > 0.0),
        )
    return out


def hter(records_d2: Sequence[ScoreRecord], threshold_from_d1: float) -> float:
    """Half total error on a target set at a threshold fixed on the source set."""
    _, spoof = _arrays(records_d2)
    _both_classes(spoof, "HTER")
    return average_error(*far_frr(records_d2, threshold_from_d1))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise area under precision-recall over the descending ranking.

    Tied scores form one operating point.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each block of tied scores
    ends = np.append(np.flatnonzero(np.diff(s) != 0), len(s) - 1)
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall_gain = np.diff(np.concatenate(([0], tp_at))) / n_pos
    return float(np.sum(recall_gain * precision))


def mean_average_precision(per_attribute_scores, per_attribute_labels) -> float:
    """Mean AP over columns; columns without positives are skipped with a warning."""
    scores = np.asarray(per_attribute_scores, dtype=np.float64)
    labels = np.asarray(per_attribute_labels)
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    aps = []
    for j in range(scores.shape[1]):
        if not labels[:, j].any():
            warnings.warn(f"attribute column {j} has no positives; excluded from mAP", stacklevel=2)
            continue
        aps.append(average_precision(scores[:, j], labels[:, j]))
    if not aps:
        raise UndefinedMetricError("mAP undefined: no attribute has a positive example")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# reports

COLUMNS = ("recall@1%", "recall@0.5%", "recall@0.1%", "auc", "eer", "apcer", "bpcer", "acer")


@dataclass(frozen=True)
class MetricReport:
    apcer: float
    bpcer: float
    acer: float
    eer: float
    auc: float
    recall_at_fpr: Mapping[float, float]
    threshold_used: float
    apcer_per_spoof_type: Mapping[str, float] = field(default_factory=dict)
    bpcer_per_face_attribute: Mapping[str, float] = field(default_factory=dict)
    coarse_fpr_targets: tuple[float, ...] = ()
    n_live: int = 0
    n_spoof: int = 0
    map_face_attributes: float | None = None

    def __post_init__(self):
        rates = [self.apcer, self.bpcer, self.acer, self.eer, self.auc]
        rates += list(self.recall_at_fpr.values())
        rates += list(self.apcer_per_spoof_type.values())
        rates += list(self.bpcer_per_face_attribute.values())
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("every rate in a MetricReport must lie in [0, 1]")
        if self.acer != average_error(self.apcer, self.bpcer):
            raise ValueError("acer must equal (apcer + bpcer) / 2")

    def row(self) -> dict[str, float]:
        r = self.recall_at_fpr
        return {
            "recall@1%": r.get(0.01, math.nan),
            "recall@0.5%": r.get(0.005, math.nan),
            "recall@0.1%": r.get(0.001, math.nan),
            "auc": self.auc,
            "eer": self.eer,
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
        }

    def to_dict(self) -> dict:
        return {
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "eer": self.eer,
            "auc": self.auc,
            "recall_at_fpr": {repr(k): v for k, v in self.recall_at_fpr.items()},
            "threshold_used": self.threshold_used,
            "apcer_per_spoof_type": dict(self.apcer_per_spoof_type),
            "bpcer_per_face_attribute": dict(self.bpcer_per_face_attribute),
            "coarse_fpr_targets": list(self.coarse_fpr_targets),
            "n_live": self.n_live,
            "n_spoof": self.n_spoof,
            "map_face_attributes": self.map_face_attributes,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        d = dict(d)
        d["recall_at_fpr"] = {float(k): v for k, v in d["recall_at_fpr"].items()}
        d["coarse_fpr_targets"] = tuple(d.get("coarse_fpr_targets", ()))
        return cls(**d)


def evaluate(records: Sequence[ScoreRecord], fpr_targets: Iterable[float] = FPR_TARGETS) -> MetricReport:
    """Full metric suite at the EER threshold of ``records``."""
    records = list(records)
    main = acer(records)
    eer_value, _ = eer(records)
    points = recall_at_fpr(records, fpr_targets)
    tau = main.threshold

    per_type = {}
    present = {r.spoof_type for r in records if r.is_spoof and r.spoof_type is not None}
    for t in SpoofType:
        if t in present:
            per_type[t.value] = apcer(records, tau, by_type=t)

    per_attr = {}
    live = [r for r in records if not r.is_spoof]
    if live and all(r.face_attributes is not None for r in live):
        for i, name in enumerate(CELEBA_ATTRIBUTES):
            if any(r.face_attributes[i] for r in live):
                per_attr[name] = bpcer(records, tau, by_attribute=i)

    map_value = None
    with_attr = [r for r in records if r.attr_scores is not None and r.face_attributes is not None]
    if with_attr:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                map_value = mean_average_precision(
                    [r.attr_scores for r in with_attr], [r.face_attributes for r in with_attr]
                )
            except UndefinedMetricError:
                map_value = None

    n_spoof = sum(r.is_spoof for r in records)
    return MetricReport(
        apcer=main.apcer,
        bpcer=main.bpcer,
        acer=main.acer,
        eer=eer_value,
        auc=auc(records),
        recall_at_fpr={t: p.recall for t, p in points.items()},
        threshold_used=tau,
        apcer_per_spoof_type=per_type,
        bpcer_per_face_attribute=per_attr,
        coarse_fpr_targets=tuple(t for t, p in points.items() if p.coarse),
        n_live=len(records) - n_spoof,
        n_spoof=n_spoof,
        map_face_attributes=map_value,
    )


def aggregate(reports: Sequence[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and population standard deviation of each table column across folds."""
    rows = [r.row() for r in reports]
    out = {}
    for col in COLUMNS:
        values = np.array([row[col] for row in rows], dtype=np.float64)
        out[col] = (float(np.mean(values)), float(np.std(values)))
    return out


def _fmt(col: str, value: float) -> str:
    if math.isnan(value):
        return "-"
    if col == "auc":
        return f"{value:.4f}"
    return f"{100 * value:.2f}"


def format_table(rows: Mapping[str, MetricReport | Mapping[str, tuple[float, float]]]) -> str:
    """Aligned text table: Recall@FPR (1, 0.5, 0.1 %), AUC, EER, APCER, BPCER, ACER.

    Rates print in percent. Values given as (mean, std) pairs print as
    ``mean±std``.
    """
    header = ["model"] + ["Rec@1%", "Rec@0.5%", "Rec@0.1%", "AUC", "EER%", "APCER%", "BPCER%", "ACER%"]
    body = []
    for name, rep in rows.items():
        cells = [name]
        if isinstance(rep, MetricReport):
            row = rep.row()
            cells += [_fmt(c, row[c]) for c in COLUMNS]
        else:
            for c in COLUMNS:
                mean, std = rep[c]
                cells.append(f"{_fmt(c, mean)}±{_fmt(c, std)}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def format_breakdown(values: Mapping[str, float], title: str, worst_first: bool = True) -> str:
    """Per-category error rates (percent), worst first."""
    items = sorted(values.items(), key=lambda kv: -kv[1] if worst_first else kv[0])
    width = max([len(title)] + [len(k) for k in values]) if values else len(title)
    lines = [title.ljust(width) + "  rate%", "-" * (width + 8)]
    lines += [f"{k.ljust(width)}  {100 * v:6.2f}" for k, v in items]
    return "\n".join(lines)
