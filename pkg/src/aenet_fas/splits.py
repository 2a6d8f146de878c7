"""Subject-disjoint train/val/test splits and the benchmark protocols."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from aenet_fas.datamodel import (
    MACRO_OF,
    Dataset,
    SensorQuality,
    SensorRegistry,
    SpoofType,
)
from aenet_fas.errors import ParseError, ProtocolError, SplitError

SPLIT_FORMAT = "aenet-fas/split"


class SplitName(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Mapping[str, SplitName]
    seed: int | None = None

    def __post_init__(self):
        coerced = {str(k): SplitName(v) for k, v in dict(self.assignment).items()}
        object.__setattr__(self, "assignment", MappingProxyType(coerced))

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, image_ref: str) -> SplitName:
        return self.assignment[image_ref]

    def refs_in(self, split: SplitName | str) -> list[str]:
        split = SplitName(split)
        return [r for r, s in self.assignment.items() if s is split]

    def check(self, dataset: Dataset) -> None:
        """Raise ``SplitError`` unless this is a valid split of ``dataset``."""
        refs = dataset.image_refs()
        if set(refs) != set(self.assignment) or len(refs) != len(self.assignment):
            missing = set(refs) - set(self.assignment)
            extra = set(self.assignment) - set(refs)
            raise SplitError(
                f"split does not cover dataset exactly "
                f"({len(missing)} unassigned, {len(extra)} unknown refs)"
            )
        owner: dict[int, SplitName] = {}
        for sample in dataset:
            split = self.assignment[sample.image_ref]
            prev = owner.setdefault(sample.subject_id, split)
            if prev is not split:
                raise SplitError(
                    f"subject {sample.subject_id} appears in both {prev.value} and {split.value}"
                )

    def partition(self, dataset: Dataset) -> dict[SplitName, Dataset]:
        return {
            name: dataset.filter(lambda s, n=name: self.assignment[s.image_ref] is n)
            for name in SplitName
        }


def make_split(dataset: Dataset, ratio: Sequence[float] = (8, 1, 1), seed: int = 0) -> SplitAssignment:
    """Assign whole subjects to train/val/test with image counts near ``ratio``.

    Subjects are taken from the sorted id list in a seeded shuffle. The first
    three go one to each split, then each subject joins whichever split is
    furthest below its image-count target (ties: train, val, test).
    """
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise SplitError(f"ratio must be three non-negative weights, got {ratio!r}")
    counts = Counter(s.subject_id for s in dataset)
    subjects = sorted(counts)
    if len(subjects) < 3:
        raise SplitError(f"need at least 3 subjects for a 3-way split, got {len(subjects)}")

    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    total = len(dataset)
    targets = [total * r / sum(ratio) for r in ratio]
    filled = [0, 0, 0]
    owner: dict[int, int] = {}
    for pos, subject in enumerate(order):
        if pos < 3:
            k = pos
        else:
            deficits = [t - f for t, f in zip(targets, filled)]
            k = int(np.argmax(deficits))
        owner[subject] = k
        filled[k] += counts[subject]

    names = list(SplitName)
    return SplitAssignment(
        {s.image_ref: names[owner[s.subject_id]] for s in dataset}, seed=seed
    )


def save_split(split: SplitAssignment, path) -> None:
    header = {"format": SPLIT_FORMAT, "version": 1, "seed": split.seed}
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines.extend(
        json.dumps({"image_ref": r, "split": s.value}, sort_keys=True, separators=(",", ":"))
        for r, s in split.assignment.items()
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path) -> SplitAssignment:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(path, 1, "missing split header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ParseError(path, 1, "malformed header") from None
    if not isinstance(header, dict) or header.get("format") != SPLIT_FORMAT:
        raise ParseError(path, 1, f"expected header with format {SPLIT_FORMAT!r}")
    assignment = {}
    for no, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            ref, name = rec["image_ref"], SplitName(rec["split"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, no, f"bad split record ({exc})") from None
        if ref in assignment:
            raise ParseError(path, no, f"duplicate image_ref {ref!r}")
        assignment[ref] = name
    return SplitAssignment(assignment, seed=header.get("seed"))


# ---------------------------------------------------------------------------
# protocols


class Protocol(str, Enum):
    INTRA = "intra"
    CROSS_MEDIUM = "cross_medium"
    CROSS_SENSOR = "cross_sensor"


DEFAULT_HELD_OUT = (SpoofType.A4, SpoofType.FACE_MASK, SpoofType.PC)
CROSS_MEDIUM_MACROS = ("print", "paper_cut", "replay")


@dataclass(frozen=True)
class ProtocolSpec:
    protocol: Protocol = Protocol.INTRA
    held_out: tuple[SpoofType, ...] = DEFAULT_HELD_OUT
    macro_types: tuple[str, ...] = CROSS_MEDIUM_MACROS
    # cross_sensor: both None -> every ordered pair of distinct groups
    train_group: SensorQuality | None = None
    test_group: SensorQuality | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "protocol", Protocol(self.protocol))
        set_(self, "held_out", tuple(SpoofType(t) for t in self.held_out))
        set_(self, "macro_types", tuple(self.macro_types))
        if self.train_group is not None:
            set_(self, "train_group", SensorQuality(self.train_group))
        if self.test_group is not None:
            set_(self, "test_group", SensorQuality(self.test_group))
        if SpoofType.NO_ATTACK in self.held_out:
            raise ProtocolError("no_attack cannot be a held-out medium")
        if (self.train_group is None) != (self.test_group is None):
            raise ProtocolError("train_group and test_group must be given together")
        if self.train_group is not None and self.train_group is self.test_group:
            raise ProtocolError("cross_sensor groups must differ")

    @classmethod
    def from_mapping(cls, section: Mapping[str, str]) -> "ProtocolSpec":
        """Build from a config section (comma-separated lists allowed)."""
        kwargs: dict = {}
        if "protocol" in section:
            kwargs["protocol"] = section["protocol"].strip()
        if "held_out" in section:
            kwargs["held_out"] = tuple(
                t.strip() for t in section["held_out"].split(",") if t.strip()
            )
        if "macro_types" in section:
            kwargs["macro_types"] = tuple(
                t.strip() for t in section["macro_types"].split(",") if t.strip()
            )
        for key in ("train_group", "test_group"):
            if section.get(key, "").strip():
                kwargs[key] = section[key].strip()
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc


@dataclass(frozen=True)
class ProtocolFold:
    name: str
    train: Dataset
    test: Dataset
    meta: Mapping[str, str] = field(default_factory=dict)


def apply_protocol(
    dataset: Dataset,
    split: SplitAssignment,
    spec: ProtocolSpec,
    registry: SensorRegistry | None = None,
) -> list[ProtocolFold]:
    """Derive the train/test folds of a protocol from a base split.

    Always returns a list: one fold for ``intra`` and ``cross_medium``, one
    per ordered sensor-group pair for ``cross_sensor``.
    """
    split.check(dataset)
    parts = split.partition(dataset)
    base_train, base_test = parts[SplitName.TRAIN], parts[SplitName.TEST]

    if spec.protocol is Protocol.INTRA:
        return [ProtocolFold("intra", base_train, base_test)]

    if spec.protocol is Protocol.CROSS_MEDIUM:
        present = {s.spoof_type for s in dataset}
        absent = [t.value for t in spec.held_out if t not in present]
        if absent:
            raise ProtocolError(f"held-out media absent from dataset: {', '.join(absent)}")
        held = set(spec.held_out)
        macros = set(spec.macro_types)

        def train_keep(s):
            if s.is_live:
                return True
            return s.spoof_type not in held and MACRO_OF[s.spoof_type] in macros

        def test_keep(s):
            return s.is_live or s.spoof_type in held

        return [
            ProtocolFold(
                "cross_medium",
                base_train.filter(train_keep),
                base_test.filter(test_keep),
                {"held_out": ",".join(t.value for t in spec.held_out)},
            )
        ]

    if registry is None:
        raise ProtocolError("cross_sensor protocol needs a sensor registry")
    registry.check_dataset(dataset)
    if spec.train_group is not None:
        pairs = [(spec.train_group, spec.test_group)]
    else:
        pairs = list(permutations(SensorQuality, 2))
    folds = []
    for train_group, test_group in pairs:
        folds.append(
            ProtocolFold(
                f"{train_group.value}-to-{test_group.value}",
                base_train.filter(lambda s, g=train_group: registry.group_of(s.sensor_id) is g),
                base_test.filter(lambda s, g=test_group: registry.group_of(s.sensor_id) is g),
                {"train_group": train_group.value, "test_group": test_group.value},
            )
        )
    return folds
