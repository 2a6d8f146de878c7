"""Annotation schema, annotation/registry files, synthetic datasets and
spoof-instrument source selection."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from aenet_fas.errors import ParseError, ValidationError

ANNOTATION_FORMAT = "aenet-fas/annotations"
REGISTRY_FORMAT = "aenet-fas/sensor-registry"
FORMAT_VERSION = 1


class Label(str, Enum):
    LIVE = "live"
    SPOOF = "spoof"

    @property
    def index(self) -> int:
        return 0 if self is Label.LIVE else 1


class SpoofType(str, Enum):
    """Micro spoof types in head-index order; ``no_attack`` is index 0."""

    NO_ATTACK = "no_attack"
    PHOTO = "photo"
    POSTER = "poster"
    A4 = "a4"
    FACE_MASK = "face_mask"
    UPPER_BODY_MASK = "upper_body_mask"
    REGION_MASK = "region_mask"
    PC = "pc"
    PAD = "pad"
    PHONE = "phone"
    MASK_3D = "3d_mask"

    @property
    def index(self) -> int:
        return _SPOOF_INDEX[self]

    @property
    def macro(self) -> str:
        return MACRO_OF[self]


class Illumination(str, Enum):
    NO_ILLUMINATION = "no_illumination"
    NORMAL = "normal"
    STRONG = "strong"
    BACK = "back"
    DARK = "dark"

    @property
    def index(self) -> int:
        return _ILLUM_INDEX[self]


class Environment(str, Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"
    NONE = "none"


class SensorQuality(str, Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


_SPOOF_INDEX = {t: i for i, t in enumerate(SpoofType)}
_ILLUM_INDEX = {t: i for i, t in enumerate(Illumination)}

# Local naming convention for the 10 attack media plus no_attack.
MACRO_OF = {
    SpoofType.NO_ATTACK: "no_attack",
    SpoofType.PHOTO: "print",
    SpoofType.POSTER: "print",
    SpoofType.A4: "print",
    SpoofType.FACE_MASK: "paper_cut",
    SpoofType.UPPER_BODY_MASK: "paper_cut",
    SpoofType.REGION_MASK: "paper_cut",
    SpoofType.PC: "replay",
    SpoofType.PAD: "replay",
    SpoofType.PHONE: "replay",
    SpoofType.MASK_3D: "3d",
}
MACRO_TYPES = ("print", "paper_cut", "replay", "3d")
ATTACK_TYPES = tuple(t for t in SpoofType if t is not SpoofType.NO_ATTACK)
ATTACK_ILLUMINATIONS = tuple(i for i in Illumination if i is not Illumination.NO_ILLUMINATION)

N_SPOOF_TYPES = len(SpoofType)
N_ILLUMINATIONS = len(Illumination)

CELEBA_ATTRIBUTES = (
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes", "Bald",
    "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair",
    "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin",
    "Eyeglasses", "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones",
    "Male", "Mouth_Slightly_Open", "Mustache", "Narrow_Eyes", "No_Beard",
    "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline", "Rosy_Cheeks",
    "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair", "Wearing_Earrings",
    "Wearing_Hat", "Wearing_Lipstick", "Wearing_Necklace", "Wearing_Necktie", "Young",
)
N_ATTRIBUTES = len(CELEBA_ATTRIBUTES)


def attribute_index(attribute: int | str) -> int:
    if isinstance(attribute, str):
        try:
            return CELEBA_ATTRIBUTES.index(attribute)
        except ValueError:
            raise KeyError(f"unknown face attribute {attribute!r}") from None
    if not 0 <= attribute < N_ATTRIBUTES:
        raise KeyError(f"face attribute index {attribute} out of range")
    return int(attribute)


def _coerce(enum_cls, value, field_name):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ValidationError(field_name, "enum", f"{value!r} not in {{{allowed}}}") from None


@dataclass(frozen=True)
class AnnotatedSample:
    image_ref: str
    subject_id: int
    label: Label
    face_attributes: tuple[int, ...]
    spoof_type: SpoofType
    illumination: Illumination
    environment: Environment
    sensor_id: str
    face_box: tuple[int, int, int, int]

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "label", _coerce(Label, self.label, "label"))
        set_(self, "spoof_type", _coerce(SpoofType, self.spoof_type, "spoof_type"))
        set_(self, "illumination", _coerce(Illumination, self.illumination, "illumination"))
        set_(self, "environment", _coerce(Environment, self.environment, "environment"))
        set_(self, "face_attributes", tuple(int(a) for a in self.face_attributes))
        set_(self, "face_box", tuple(int(v) for v in self.face_box))
        self._validate()

    def _validate(self):
        if not isinstance(self.image_ref, str) or not self.image_ref:
            raise ValidationError("image_ref", "non-empty string")
        if isinstance(self.subject_id, bool) or not isinstance(self.subject_id, (int, np.integer)):
            raise ValidationError("subject_id", "integer", repr(self.subject_id))
        if self.subject_id < 0:
            raise ValidationError("subject_id", "subject_id >= 0", str(self.subject_id))
        if len(self.face_attributes) != N_ATTRIBUTES:
            raise ValidationError(
                "face_attributes", "40 entries", f"got {len(self.face_attributes)}"
            )
        if any(a not in (0, 1) for a in self.face_attributes):
            raise ValidationError("face_attributes", "binary entries")
        if len(self.face_box) != 4:
            raise ValidationError("face_box", "(x, y, w, h)")
        if self.face_box[2] <= 0 or self.face_box[3] <= 0:
            raise ValidationError("face_box", "w > 0 and h > 0", str(self.face_box))
        if not isinstance(self.sensor_id, str) or not self.sensor_id:
            raise ValidationError("sensor_id", "non-empty string")

        live = self.label is Label.LIVE
        if live != (self.spoof_type is SpoofType.NO_ATTACK):
            raise ValidationError(
                "spoof_type", "live<=>no_attack",
                f"label={self.label.value}, spoof_type={self.spoof_type.value}",
            )
        if live != (self.illumination is Illumination.NO_ILLUMINATION):
            raise ValidationError(
                "illumination", "live<=>no_illumination",
                f"label={self.label.value}, illumination={self.illumination.value}",
            )
        if live != (self.environment is Environment.NONE):
            raise ValidationError(
                "environment", "live<=>environment_none",
                f"label={self.label.value}, environment={self.environment.value}",
            )

    @property
    def is_live(self) -> bool:
        return self.label is Label.LIVE

    @property
    def face_area(self) -> int:
        return self.face_box[2] * self.face_box[3]

    def has_attribute(self, attribute: int | str) -> bool:
        return self.face_attributes[attribute_index(attribute)] == 1

    def to_record(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "subject_id": int(self.subject_id),
            "label": self.label.value,
            "face_attributes": "".join(str(a) for a in self.face_attributes),
            "spoof_type": self.spoof_type.value,
            "illumination": self.illumination.value,
            "environment": self.environment.value,
            "sensor_id": self.sensor_id,
            "face_box": list(self.face_box),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "AnnotatedSample":
        expected = {
            "image_ref", "subject_id", "label", "face_attributes", "spoof_type",
            "illumination", "environment", "sensor_id", "face_box",
        }
        missing = expected - rec.keys()
        if missing:
            raise ValidationError(sorted(missing)[0], "required field")
        extra = rec.keys() - expected
        if extra:
            raise ValidationError(sorted(extra)[0], "unknown field")
        attrs = rec["face_attributes"]
        if isinstance(attrs, str):
            if any(ch not in "01" for ch in attrs):
                raise ValidationError("face_attributes", "binary entries", attrs)
            attrs = [int(ch) for ch in attrs]
        return cls(
            image_ref=rec["image_ref"],
            subject_id=rec["subject_id"],
            label=rec["label"],
            face_attributes=tuple(attrs),
            spoof_type=rec["spoof_type"],
            illumination=rec["illumination"],
            environment=rec["environment"],
            sensor_id=rec["sensor_id"],
            face_box=tuple(rec["face_box"]),
        )


@dataclass(frozen=True)
class SensorRegistry:
    groups: Mapping[str, SensorQuality]

    def __post_init__(self):
        coerced = {
            str(k): _coerce(SensorQuality, v, "group") for k, v in dict(self.groups).items()
        }
        object.__setattr__(self, "groups", MappingProxyType(coerced))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "SensorRegistry":
        groups: dict[str, str] = {}
        for sensor_id, group in pairs:
            if sensor_id in groups:
                raise ValidationError("sensor_id", "registered exactly once", sensor_id)
            groups[sensor_id] = group
        return cls(groups)

    def __contains__(self, sensor_id) -> bool:
        return sensor_id in self.groups

    def __len__(self) -> int:
        return len(self.groups)

    def group_of(self, sensor_id: str) -> SensorQuality:
        try:
            return self.groups[sensor_id]
        except KeyError:
            raise ValidationError("sensor_id", "present in registry", sensor_id) from None

    def sensors_in(self, group: SensorQuality | str) -> list[str]:
        group = _coerce(SensorQuality, group, "group")
        return sorted(s for s, g in self.groups.items() if g is group)

    @property
    def sensor_ids(self) -> list[str]:
        return sorted(self.groups)

    def check_dataset(self, dataset: "Dataset") -> None:
        for sample in dataset:
            if sample.sensor_id not in self.groups:
                raise ValidationError(
                    "sensor_id", "present in registry",
                    f"{sample.sensor_id!r} ({sample.image_ref})",
                )


def _slug(name: str) -> str:
    return name.lower().replace(" ", "_")


_LOW = ["Honor V8", "OPPO R9", "HUAWEI MediaPad M5", "Xiaomi Mi Note3", "Gionee S9",
        "Logitech C670i", "ThinkPad T450", "Moto X4", "vivo X7", "Dell 5289", "OPPO A73"]
_MID = ["vivo X20", "Gionee S11", "vivo Y85", "Hisense H11", "iphone XR", "OPPO A5",
        "OPPO R17", "OPPO A3", "Xiaomi 8", "vivo Y93"]
_HIGH = ["HUAWEI P30", "meizu 16S", "vivo NEX 3"]

DEFAULT_REGISTRY = SensorRegistry(
    {_slug(s): SensorQuality.LOW for s in _LOW}
    | {_slug(s): SensorQuality.MID for s in _MID}
    | {_slug(s): SensorQuality.HIGH for s in _HIGH}
)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[AnnotatedSample, ...]
    name: str = "dataset"
    version: str = "1"
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))
        seen = set()
        for s in self.samples:
            if s.image_ref in seen:
                raise ValidationError("image_ref", "unique within dataset", s.image_ref)
            seen.add(s.image_ref)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[AnnotatedSample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.samples, self.name, self.version, dict(self.meta)) == (
            other.samples, other.name, other.version, dict(other.meta)
        )

    __hash__ = None

    def filter(self, predicate: Callable[[AnnotatedSample], bool]) -> "Dataset":
        return Dataset(
            tuple(s for s in self.samples if predicate(s)), self.name, self.version, self.meta
        )

    def with_samples(self, samples: Iterable[AnnotatedSample], name: str | None = None) -> "Dataset":
        return Dataset(tuple(samples), name or self.name, self.version, self.meta)

    def subject_ids(self) -> list[int]:
        return sorted({s.subject_id for s in self.samples})

    def image_refs(self) -> list[str]:
        return [s.image_ref for s in self.samples]

    def by_ref(self) -> dict[str, AnnotatedSample]:
        return {s.image_ref: s for s in self.samples}

    def count(self, label: Label | str) -> int:
        label = Label(label)
        return sum(1 for s in self.samples if s.label is label)


# ---------------------------------------------------------------------------
# line-delimited file IO


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _read_lines(path: Path, fmt: str) -> tuple[dict, list[tuple[int, dict]]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(path, 1, "missing version header")
    decoded = []
    for no, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(path, no, f"malformed record ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(path, no, "record is not an object")
        decoded.append((no, obj))
    _, header = decoded[0]
    if header.get("format") != fmt:
        raise ParseError(path, 1, f"expected header with format {fmt!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(path, 1, f"unsupported version {header.get('version')!r}")
    return header, decoded[1:]


def dumps_annotations(dataset: Dataset) -> str:
    header = {
        "format": ANNOTATION_FORMAT,
        "version": FORMAT_VERSION,
        "name": dataset.name,
        "dataset_version": dataset.version,
        "meta": dict(dataset.meta),
    }
    out = [_dumps(header)]
    out.extend(_dumps(s.to_record()) for s in dataset.samples)
    return "\n".join(out) + "\n"


def save_annotations(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_annotations(dataset), encoding="utf-8")


def load_annotations(path) -> Dataset:
    """Read an annotation file.

    Raises ``ParseError`` (with line number) for undecodable lines and
    ``ValidationError`` for records that break a schema rule.
    """
    path = Path(path)
    header, rows = _read_lines(path, ANNOTATION_FORMAT)
    samples = []
    for no, rec in rows:
        try:
            samples.append(AnnotatedSample.from_record(rec))
        except ValidationError as exc:
            raise ValidationError(exc.field, exc.rule, f"{path}:{no}") from exc
        except (TypeError, KeyError) as exc:
            raise ParseError(path, no, f"bad field value ({exc})") from None
    return Dataset(
        tuple(samples),
        name=header.get("name", path.stem),
        version=str(header.get("dataset_version", "1")),
        meta=header.get("meta", {}),
    )


def save_registry(registry: SensorRegistry, path) -> None:
    out = [_dumps({"format": REGISTRY_FORMAT, "version": FORMAT_VERSION})]
    out.extend(
        _dumps({"sensor_id": s, "group": registry.groups[s].value}) for s in registry.sensor_ids
    )
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_registry(path) -> SensorRegistry:
    path = Path(path)
    _, rows = _read_lines(path, REGISTRY_FORMAT)
    pairs = []
    for no, rec in rows:
        if set(rec) != {"sensor_id", "group"}:
            raise ParseError(path, no, "expected fields sensor_id, group")
        pairs.append((rec["sensor_id"], rec["group"]))
    return SensorRegistry.from_pairs(pairs)


# ---------------------------------------------------------------------------
# synthetic data


def _balanced(rng: np.random.Generator, values: Sequence, n: int) -> list:
    """n draws covering every value once n >= len(values), in shuffled order."""
    if n == 0:
        return []
    tiled = [values[i % len(values)] for i in range(n)]
    order = rng.permutation(n)
    return [tiled[i] for i in order]


def generate_synthetic(
    n_subjects: int,
    images_per_subject: int,
    live_ratio: float = 0.25,
    seed: int = 0,
    registry: SensorRegistry | None = None,
    name: str = "synthetic",
) -> Dataset:
    """Build a schema-valid dataset with balanced attack media and sessions.

    Live counts are spread evenly across subjects; each subject's images are
    its live shots first, then the spoof captures of that subject.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    if images_per_subject < 1:
        raise ValueError("images_per_subject must be >= 1")
    if not 0 < live_ratio < 1:
        raise ValueError("live_ratio must lie strictly between 0 and 1")
    registry = registry or DEFAULT_REGISTRY
    rng = np.random.default_rng(seed)

    total = n_subjects * images_per_subject
    n_live = int(math.floor(live_ratio * total + 0.5))
    base, extra = divmod(n_live, n_subjects)
    bonus = set(rng.permutation(n_subjects)[:extra].tolist())
    live_per_subject = [base + (1 if i in bonus else 0) for i in range(n_subjects)]

    n_spoof = total - n_live
    spoof_types = iter(_balanced(rng, ATTACK_TYPES, n_spoof))
    illums = iter(_balanced(rng, ATTACK_ILLUMINATIONS, n_spoof))
    envs = iter(_balanced(rng, (Environment.INDOOR, Environment.OUTDOOR), n_spoof))
    sensors = iter(_balanced(rng, registry.sensor_ids, total))

    samples = []
    for subject in range(n_subjects):
        identity = rng.integers(0, 2, N_ATTRIBUTES)
        for idx in range(images_per_subject):
            live = idx < live_per_subject[subject]
            flips = rng.random(N_ATTRIBUTES) < 0.1
            attrs = tuple(int(a) for a in np.where(flips, 1 - identity, identity))
            w, h = (int(v) for v in rng.integers(40, 201, 2))
            x, y = (int(v) for v in rng.integers(0, 64, 2))
            kind = "live" if live else "spoof"
            samples.append(
                AnnotatedSample(
                    image_ref=f"{name}/{subject:05d}/{kind}_{idx:03d}.png",
                    subject_id=subject,
                    label=Label.LIVE if live else Label.SPOOF,
                    face_attributes=attrs,
                    spoof_type=SpoofType.NO_ATTACK if live else next(spoof_types),
                    illumination=Illumination.NO_ILLUMINATION if live else next(illums),
                    environment=Environment.NONE if live else next(envs),
                    sensor_id=next(sensors),
                    face_box=(x, y, w, h),
                )
            )
    meta = {"seed": seed, "live_ratio": live_ratio, "n_subjects": n_subjects,
            "images_per_subject": images_per_subject}
    return Dataset(tuple(samples), name=name, version="1", meta=meta)


def select_spoof_instruments(dataset: Dataset, k: int = 20) -> list[str]:
    """Top-k live images per subject by face-box area, for attack production.

    Groups appear in order of each subject's first image; ties on area keep
    dataset order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    groups: OrderedDict[int, list[tuple[int, AnnotatedSample]]] = OrderedDict()
    for pos, sample in enumerate(dataset):
        if not sample.is_live:
            raise ValueError(
                f"spoof sample {sample.image_ref!r} present; instrument sources must be live"
            )
        groups.setdefault(sample.subject_id, []).append((pos, sample))
    selected = []
    for members in groups.values():
        ranked = sorted(members, key=lambda ps: (-ps[1].face_area, ps[0]))
        selected.extend(s.image_ref for _, s in ranked[:k])
    return selected
