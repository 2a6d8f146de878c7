"""Per-variant spoof scores and the score-file interchange format.

All scores are spoof evidence in [0, 1]: higher means more likely an attack.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, softmax

from aenet_fas.aenet import HeadOutputs, ModelConfig
from aenet_fas.datamodel import AnnotatedSample, Label, SpoofType
from aenet_fas.errors import ParseError, ScoringError

SCORE_FORMAT = "aenet-fas/scores"
DEPTH_NORM_ANCHOR = 14.0  # L2 norm of an all-ones 14x14 map


def _np(x) -> np.ndarray:
    if x is None:
        return None
    if hasattr(x, "detach"):
        x = x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def _require(outputs: HeadOutputs, *heads: str) -> None:
    missing = [h for h in heads if outputs.get(h) is None]
    if missing:
        raise ScoringError(f"scoring rule needs head output(s): {', '.join(missing)}")


def score_baseline(outputs: HeadOutputs) -> float:
    """Softmax probability of the spoof class."""
    _require(outputs, "c")
    live, spoof = _np(outputs.c_logits).reshape(2)
    return float(expit(spoof - live))


def semantic_terms(outputs: HeadOutputs) -> dict[str, float]:
    """Spoof evidence from whichever semantic heads are present.

    Spoof type and illumination: 1 - P(first label). Face attributes:
    1 - mean sigmoid probability, since attack images should score low.
    """
    terms = {}
    if outputs.sf_logits is not None:
        terms["sf"] = float(1.0 - np.mean(expit(_np(outputs.sf_logits))))
    if outputs.ss_logits is not None:
        terms["ss"] = float(1.0 - softmax(_np(outputs.ss_logits))[0])
    if outputs.si_logits is not None:
        terms["si"] = float(1.0 - softmax(_np(outputs.si_logits))[0])
    return terms


def score_semantic(outputs: HeadOutputs) -> float:
    _require(outputs, "sf", "ss", "si")
    terms = semantic_terms(outputs)
    return (terms["sf"] + terms["ss"] + terms["si"]) / 3.0


def score_depth_norm(outputs: HeadOutputs) -> float:
    _require(outputs, "gd")
    norm = float(np.linalg.norm(_np(outputs.gd_map).ravel()))
    return 1.0 - min(1.0, norm / DEPTH_NORM_ANCHOR)


def score_for_config(outputs: HeadOutputs, config: ModelConfig) -> float:
    """Decision rule of a variant.

    Anything with the classification head scores from it alone; auxiliary
    heads only supervise. Auxiliary-only variants use their own heads.
    """
    if config.enable_c:
        return score_baseline(outputs)
    sem = [h for h in ("sf", "ss", "si") if config.enabled(h)]
    if len(sem) == 3:
        return score_semantic(outputs)
    if len(sem) == 1 and not (config.enable_gd or config.enable_gr):
        _require(outputs, sem[0])
        return semantic_terms(outputs)[sem[0]]
    if config.enable_gd and not sem:
        return score_depth_norm(outputs)
    raise ScoringError(f"no scoring rule for head set {config.heads}")


def head_scores(outputs: HeadOutputs) -> dict[str, float]:
    """Every per-head spoof score that can be computed from ``outputs``."""
    out = {}
    if outputs.c_logits is not None:
        out["c"] = score_baseline(outputs)
    out.update(semantic_terms(outputs))
    if outputs.gd_map is not None:
        out["gd"] = score_depth_norm(outputs)
    return out


def decide(records: Iterable["ScoreRecord"] | Sequence[float], threshold: float) -> list[int]:
    """Res_i = 1 (spoof) iff score >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return [int(_score_of(r) >= threshold) for r in records]


def _score_of(r) -> float:
    return r.spoof_score if isinstance(r, ScoreRecord) else float(r)


@dataclass(frozen=True)
class ScoreRecord:
    image_ref: str
    spoof_score: float
    label: Label
    spoof_type: SpoofType | None = None
    face_attributes: tuple[int, ...] | None = None
    head_scores: Mapping[str, float] = field(default_factory=dict)
    fold: str | None = None
    attr_scores: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        if self.spoof_type is not None:
            object.__setattr__(self, "spoof_type", SpoofType(self.spoof_type))
        score = float(self.spoof_score)
        if not math.isfinite(score) or not 0.0 <= score <= 1.0:
            raise ScoringError(f"{self.image_ref}: spoof_score {score} outside [0, 1]")
        object.__setattr__(self, "spoof_score", score)
        if self.face_attributes is not None:
            object.__setattr__(self, "face_attributes", tuple(int(a) for a in self.face_attributes))
        if self.attr_scores is not None:
            object.__setattr__(self, "attr_scores", tuple(float(a) for a in self.attr_scores))

    @property
    def is_spoof(self) -> bool:
        return self.label is Label.SPOOF

    @classmethod
    def from_sample(cls, sample: AnnotatedSample, spoof_score: float, **kw) -> "ScoreRecord":
        return cls(
            image_ref=sample.image_ref,
            spoof_score=spoof_score,
            label=sample.label,
            spoof_type=sample.spoof_type,
            face_attributes=sample.face_attributes,
            **kw,
        )

    def to_record(self) -> dict:
        rec: dict = {
            "image_ref": self.image_ref,
            "spoof_score": self.spoof_score,
            "label": self.label.value,
        }
        if self.spoof_type is not None:
            rec["spoof_type"] = self.spoof_type.value
        if self.face_attributes is not None:
            rec["face_attributes"] = "".join(str(a) for a in self.face_attributes)
        if self.head_scores:
            rec["head_scores"] = dict(self.head_scores)
        if self.fold is not None:
            rec["fold"] = self.fold
        if self.attr_scores is not None:
            rec["attr_scores"] = list(self.attr_scores)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "ScoreRecord":
        attrs = rec.get("face_attributes")
        if isinstance(attrs, str):
            attrs = tuple(int(ch) for ch in attrs)
        return cls(
            image_ref=rec["image_ref"],
            spoof_score=rec["spoof_score"],
            label=rec["label"],
            spoof_type=rec.get("spoof_type"),
            face_attributes=attrs,
            head_scores=rec.get("head_scores", {}),
            fold=rec.get("fold"),
            attr_scores=rec.get("attr_scores"),
        )


def save_scores(records: Sequence[ScoreRecord], path, **header_fields) -> None:
    header = {"format": SCORE_FORMAT, "version": 1, **header_fields}
    dump = lambda o: json.dumps(o, sort_keys=True, separators=(",", ":"))  # noqa: E731
    lines = [dump(header)] + [dump(r.to_record()) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path) -> tuple[dict, list[ScoreRecord]]:
    """Read a score file.

    A header line is optional so hand-written files work; every other line
    needs at least ``image_ref``, ``spoof_score`` and ``label``.
    """
    path = Path(path)
    header: dict = {}
    records = []
    for no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(path, no, f"malformed record ({exc.msg})") from None
        if no == 1 and isinstance(obj, dict) and obj.get("format") == SCORE_FORMAT:
            header = obj
            continue
        try:
            records.append(ScoreRecord.from_record(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, no, f"bad score record ({exc})") from None
    return header, records
