"""AENet: a shared backbone feeding a live/spoof head, three semantic heads
(face attributes, spoof type, illumination) and two 14x14 geometric heads
(depth, reflection). Any subset of heads can be enabled."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from aenet_fas.datamodel import N_ATTRIBUTES, N_ILLUMINATIONS, N_SPOOF_TYPES
from aenet_fas.errors import CheckpointError, ConfigurationError, ShapeError

MAP_SIZE = 14
HEADS = ("c", "sf", "ss", "si", "gd", "gr")
HEAD_WIDTHS = {"c": 2, "sf": N_ATTRIBUTES, "ss": N_SPOOF_TYPES, "si": N_ILLUMINATIONS}
OUTPUT_FIELD = {
    "c": "c_logits", "sf": "sf_logits", "ss": "ss_logits",
    "si": "si_logits", "gd": "gd_map", "gr": "gr_map",
}
LAMBDA_OF = {"sf": "lambda_f", "ss": "lambda_s", "si": "lambda_i", "gd": "lambda_d", "gr": "lambda_r"}


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.005
    epochs: int = 50
    # not fixed by the method; local defaults
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32


@dataclass(frozen=True)
class AugmentationConfig:
    color_distortion: bool = True


@dataclass(frozen=True)
class ModelConfig:
    enable_c: bool = True
    enable_sf: bool = False
    enable_ss: bool = False
    enable_si: bool = False
    enable_gd: bool = False
    enable_gr: bool = False
    lambda_f: float = 1.0
    lambda_s: float = 0.1
    lambda_i: float = 0.01
    lambda_d: float = 0.1
    lambda_r: float = 0.1
    input_size: int = 224
    map_size: int = MAP_SIZE
    backbone_id: str = "tiny"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    variant: str | None = None

    def __post_init__(self):
        if not any(self.enabled(h) for h in HEADS):
            raise ConfigurationError("at least one head must be enabled")
        if self.map_size != MAP_SIZE:
            raise ConfigurationError(f"map_size is fixed at {MAP_SIZE}, got {self.map_size}")
        for name in LAMBDA_OF.values():
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be a finite non-negative number, got {value}")
        if self.input_size < 8:
            raise ConfigurationError("input_size must be at least 8")
        if self.optimizer.kind.lower() != "sgd":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer.kind!r}")

    def enabled(self, head: str) -> bool:
        return getattr(self, f"enable_{head}")

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(h for h in HEADS if self.enabled(h))

    def weight(self, head: str) -> float:
        return getattr(self, LAMBDA_OF[head])

    @classmethod
    def for_variant(cls, name: str, **overrides) -> "ModelConfig":
        """Config for a named variant; disabled heads get zero loss weight."""
        try:
            heads, weights = VARIANTS[name]
        except KeyError:
            raise ConfigurationError(
                f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}"
            ) from None
        kwargs: dict = {f"enable_{h}": h in heads for h in HEADS}
        for head, lam in LAMBDA_OF.items():
            if head not in heads:
                kwargs[lam] = 0.0
        kwargs.update(weights)
        kwargs["variant"] = name
        kwargs.update(overrides)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        data = dict(data)
        if "optimizer" in data and isinstance(data["optimizer"], Mapping):
            data["optimizer"] = OptimizerConfig(**data["optimizer"])
        if "augmentation" in data and isinstance(data["augmentation"], Mapping):
            data["augmentation"] = AugmentationConfig(**data["augmentation"])
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, section: Mapping[str, str]) -> "ModelConfig":
        """Apply string key/value overrides (config-file ``[model]``/``[train]`` sections)."""
        top: dict = {}
        opt: dict = {}
        aug: dict = {}
        opt_fields = {f.name: f.type for f in fields(OptimizerConfig)}
        for key, raw in section.items():
            if key in opt_fields:
                opt[key] = _parse_scalar(raw, getattr(self.optimizer, key))
            elif key == "color_distortion":
                aug[key] = _parse_scalar(raw, True)
            elif key in {f.name for f in fields(ModelConfig)} and key not in (
                "optimizer", "augmentation"
            ):
                current = getattr(self, key)
                top[key] = raw if current is None else _parse_scalar(raw, current)
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        return replace(
            self,
            optimizer=replace(self.optimizer, **opt),
            augmentation=replace(self.augmentation, **aug),
            **top,
        )


def _parse_scalar(raw, like):
    if not isinstance(raw, str):
        return raw
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"expected a number, got {raw!r}") from None
    return raw.strip()


# name -> (enabled heads, loss-weight overrides). Single-task auxiliary
# variants train their one head at weight 1.
VARIANTS: dict[str, tuple[frozenset, dict]] = {
    "baseline": (frozenset({"c"}), {}),
    "aenet-s": (frozenset({"sf", "ss", "si"}), {}),
    "aenet-sf": (frozenset({"sf"}), {"lambda_f": 1.0}),
    "aenet-ss": (frozenset({"ss"}), {"lambda_s": 1.0}),
    "aenet-si": (frozenset({"si"}), {"lambda_i": 1.0}),
    "aenet-cs-wo-sf": (frozenset({"c", "ss", "si"}), {}),
    "aenet-cs-wo-ss": (frozenset({"c", "sf", "si"}), {}),
    "aenet-cs-wo-si": (frozenset({"c", "sf", "ss"}), {}),
    "aenet-cs": (frozenset({"c", "sf", "ss", "si"}), {}),
    "aenet-gd": (frozenset({"gd"}), {"lambda_d": 1.0}),
    "aenet-cg-wo-gr": (frozenset({"c", "gd"}), {}),
    "aenet-cg-wo-gd": (frozenset({"c", "gr"}), {}),
    "aenet-cg": (frozenset({"c", "gd", "gr"}), {}),
    "aenet-csg": (frozenset(HEADS), {}),
}


@dataclass
class HeadOutputs:
    """Raw head predictions; a leading batch dimension is optional."""

    c_logits: torch.Tensor | None = None
    sf_logits: torch.Tensor | None = None
    ss_logits: torch.Tensor | None = None
    si_logits: torch.Tensor | None = None
    gd_map: torch.Tensor | None = None
    gr_map: torch.Tensor | None = None

    def get(self, head: str) -> torch.Tensor | None:
        return getattr(self, OUTPUT_FIELD[head])

    @property
    def present(self) -> tuple[str, ...]:
        return tuple(h for h in HEADS if self.get(h) is not None)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {h: tuple(self.get(h).shape) for h in self.present}

    def unbind(self) -> list["HeadOutputs"]:
        present = self.present
        n = self.get(present[0]).shape[0]
        return [
            HeadOutputs(**{OUTPUT_FIELD[h]: self.get(h)[i] for h in present})
            for i in range(n)
        ]


# ---------------------------------------------------------------------------
# backbones


def _conv_bn(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TinyBackbone(nn.Module):
    """Three conv/pool stages; 224 input -> 64 x 14 x 14 features."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.out_channels = 4 * width
        self.features = nn.Sequential(
            _conv_bn(3, width, stride=2),
            nn.MaxPool2d(2),
            _conv_bn(width, 2 * width),
            nn.MaxPool2d(2),
            _conv_bn(2 * width, 4 * width),
            nn.MaxPool2d(2),
        )

    def forward(self, x):
        return self.features(x)


class ResNet18Backbone(nn.Module):
    def __init__(self):
        super().__init__()
        from torchvision.models import resnet18

        net = resnet18(weights=None)
        self.out_channels = 512
        self.features = nn.Sequential(*list(net.children())[:-2])

    def forward(self, x):
        return self.features(x)


BACKBONES: dict[str, Callable[[], nn.Module]] = {
    "tiny": TinyBackbone,
    "tiny8": lambda: TinyBackbone(width=8),
    "resnet18": ResNet18Backbone,
}


def register_backbone(name: str, factory: Callable[[], nn.Module]) -> None:
    """Factories return a module with an ``out_channels`` attribute mapping
    (B, 3, H, W) images to (B, out_channels, h, w) features."""
    BACKBONES[name] = factory


class GeometricHead(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        hidden = max(1, channels // 2)
        self.conv1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)

    def forward(self, feats):
        x = self.conv2(F.relu(self.conv1(feats)))
        x = F.interpolate(x, size=(MAP_SIZE, MAP_SIZE), mode="bilinear", align_corners=False)
        return x[:, 0]


class AENet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        try:
            factory = BACKBONES[config.backbone_id]
        except KeyError:
            raise ConfigurationError(
                f"unknown backbone {config.backbone_id!r}; registered: {', '.join(BACKBONES)}"
            ) from None
        self.backbone = factory()
        ch = self.backbone.out_channels
        self.heads = nn.ModuleDict()
        for head in config.heads:
            if head in HEAD_WIDTHS:
                self.heads[head] = nn.Linear(ch, HEAD_WIDTHS[head])
            else:
                self.heads[head] = GeometricHead(ch)

    def forward(self, x: torch.Tensor) -> HeadOutputs:
        size = self.config.input_size
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != size or x.shape[3] != size:
            raise ShapeError(
                f"expected images of shape (B, 3, {size}, {size}), got {tuple(x.shape)}"
            )
        feats = self.backbone(x)
        pooled = feats.mean(dim=(2, 3))
        out = HeadOutputs()
        for head, module in self.heads.items():
            value = module(pooled) if head in HEAD_WIDTHS else module(feats)
            setattr(out, OUTPUT_FIELD[head], value)
        return out

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig, seed: int | None = None) -> AENet:
    if seed is None:
        return AENet(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return AENet(config)


def _as_tensor(batch, model: nn.Module) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(batch)
    return batch.to(dtype)


def forward(model: AENet, batch) -> list[HeadOutputs]:
    """Inference-mode forward: one ``HeadOutputs`` per image."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(_as_tensor(batch, model))
    finally:
        model.train(was_training)
    return out.unbind()


def save_checkpoint(model: AENet, path, **extra) -> None:
    torch.save({"config": model.config.to_dict(), "state_dict": model.state_dict(), **extra}, path)


def load_checkpoint(path, config: ModelConfig | None = None) -> tuple[AENet, dict]:
    """Load a model; passing ``config`` asserts it matches the embedded one."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    try:
        embedded = ModelConfig.from_dict(blob["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: no usable embedded config ({exc})") from None
    if config is not None and config != embedded:
        raise CheckpointError(f"{path}: checkpoint config does not match the requested config")
    model = AENet(embedded)
    model.load_state_dict(blob["state_dict"])
    extra = {k: v for k, v in blob.items() if k not in ("config", "state_dict")}
    return model, extra
