"""Composite training objectives and geometric ground truth.

The classification loss is always counted once. Auxiliary terms are added
with their configured weights:

    semantic:   L_C + lambda_f*L_Sf + lambda_s*L_Ss + lambda_i*L_Si
    geometric:  L_C + lambda_d*L_Gd + lambda_r*L_Gr
    combined:   L_C + all five weighted auxiliary terms
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from aenet_fas.aenet import LAMBDA_OF, MAP_SIZE, HeadOutputs, ModelConfig
from aenet_fas.datamodel import N_ATTRIBUTES, AnnotatedSample, Illumination, SpoofType
from aenet_fas.errors import ConfigurationError, GenerationError

MapGenerator = Callable[[AnnotatedSample], np.ndarray]

TERM_NAMES = {"c": "C", "sf": "Sf", "ss": "Ss", "si": "Si", "gd": "Gd", "gr": "Gr"}
SEMANTIC = ("sf", "ss", "si")
GEOMETRIC = ("gd", "gr")


@dataclass(frozen=True)
class GeometricTarget:
    gd_true: np.ndarray
    gr_true: np.ndarray

    def satisfies_zero_convention(self, is_live: bool) -> bool:
        zero = self.gr_true if is_live else self.gd_true
        return not np.any(zero)


def _checked_map(grid, what: str) -> np.ndarray:
    arr = np.asarray(grid, dtype=np.float64)
    if arr.shape != (MAP_SIZE, MAP_SIZE):
        raise GenerationError(f"{what} generator returned shape {arr.shape}, expected (14, 14)")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise GenerationError(f"{what} generator output must lie in [0, 1]")
    return arr


def make_geometric_targets(
    sample: AnnotatedSample, depth_gen: MapGenerator, refl_gen: MapGenerator
) -> GeometricTarget:
    """Live faces carry depth and no reflection; spoofs the reverse."""
    zeros = np.zeros((MAP_SIZE, MAP_SIZE))
    if sample.is_live:
        return GeometricTarget(_checked_map(depth_gen(sample), "depth"), zeros)
    return GeometricTarget(zeros, _checked_map(refl_gen(sample), "reflection"))


@dataclass
class SupervisionTargets:
    """Batched targets: class, 40 attributes, spoof type, illumination, maps."""

    label: torch.Tensor
    attributes: torch.Tensor
    spoof_type: torch.Tensor
    illumination: torch.Tensor
    gd_true: torch.Tensor
    gr_true: torch.Tensor

    def __post_init__(self):
        live = self.label == 0
        if bool(torch.any(self.spoof_type[live] != SpoofType.NO_ATTACK.index)) or bool(
            torch.any(self.illumination[live] != Illumination.NO_ILLUMINATION.index)
        ):
            raise ValueError("live targets must use the no_attack / no_illumination labels")

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[AnnotatedSample],
        depth_gen: MapGenerator,
        refl_gen: MapGenerator,
        dtype=torch.float32,
    ) -> "SupervisionTargets":
        geo = [make_geometric_targets(s, depth_gen, refl_gen) for s in samples]
        return cls(
            label=torch.tensor([s.label.index for s in samples], dtype=torch.long),
            attributes=torch.tensor([s.face_attributes for s in samples], dtype=dtype).reshape(
                -1, N_ATTRIBUTES
            ),
            spoof_type=torch.tensor([s.spoof_type.index for s in samples], dtype=torch.long),
            illumination=torch.tensor([s.illumination.index for s in samples], dtype=torch.long),
            gd_true=torch.tensor(np.stack([g.gd_true for g in geo]), dtype=dtype),
            gr_true=torch.tensor(np.stack([g.gr_true for g in geo]), dtype=dtype),
        )


class LossResult(NamedTuple):
    total: torch.Tensor
    terms: dict[str, torch.Tensor]

    def breakdown(self) -> dict[str, float]:
        out = {"total": float(self.total.detach())}
        out.update({k: float(v.detach()) for k, v in self.terms.items()})
        return out


def _batched(x: torch.Tensor, feature_dims: int) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == feature_dims else x


def _term(head: str, outputs: HeadOutputs, targets: SupervisionTargets) -> torch.Tensor:
    pred = outputs.get(head)
    if head == "c":
        return F.cross_entropy(_batched(pred, 1), targets.label)
    if head == "sf":
        logits = _batched(pred, 1)
        return F.binary_cross_entropy_with_logits(logits, targets.attributes.to(logits.dtype))
    if head == "ss":
        return F.cross_entropy(_batched(pred, 1), targets.spoof_type)
    if head == "si":
        return F.cross_entropy(_batched(pred, 1), targets.illumination)
    truth = targets.gd_true if head == "gd" else targets.gr_true
    pred = _batched(pred, 2)
    return torch.mean((pred - truth.to(pred.dtype)) ** 2)


def _composite(outputs, targets, config: ModelConfig, family, with_c: bool) -> LossResult:
    terms: dict[str, torch.Tensor] = {}
    total = None
    if with_c:
        if not config.enable_c or outputs.c_logits is None:
            raise ConfigurationError("the live/spoof head must be enabled and present")
        terms["C"] = _term("c", outputs, targets)
        total = terms["C"]
    for head in family:
        weight = getattr(config, LAMBDA_OF[head])
        present = outputs.get(head) is not None
        if weight != 0 and not present:
            raise ConfigurationError(
                f"{LAMBDA_OF[head]}={weight} references the {TERM_NAMES[head]} head, "
                f"which produced no output"
            )
        if not present:
            continue
        terms[TERM_NAMES[head]] = _term(head, outputs, targets)
        if weight != 0:
            weighted = weight * terms[TERM_NAMES[head]]
            total = weighted if total is None else total + weighted
    if total is None:
        raise ConfigurationError("objective has no active terms")
    return LossResult(total, terms)


def loss_cs(outputs: HeadOutputs, targets: SupervisionTargets, config: ModelConfig) -> LossResult:
    """Classification plus weighted semantic terms.

    ``L_Sf`` is the mean binary cross-entropy over the 40 attributes; the
    other three terms are softmax cross-entropies.
    """
    return _composite(outputs, targets, config, SEMANTIC, with_c=True)


def loss_cg(outputs: HeadOutputs, targets: SupervisionTargets, config: ModelConfig) -> LossResult:
    """Classification plus weighted depth/reflection MSE over the 196 cells."""
    return _composite(outputs, targets, config, GEOMETRIC, with_c=True)


def loss_csg(outputs: HeadOutputs, targets: SupervisionTargets, config: ModelConfig) -> LossResult:
    return _composite(outputs, targets, config, SEMANTIC + GEOMETRIC, with_c=True)


def variant_loss(outputs: HeadOutputs, targets: SupervisionTargets, config: ModelConfig) -> LossResult:
    """Training objective for any head configuration.

    Variants with the classification head use the combined objective (it
    reduces to the semantic or geometric one when the other weights are 0).
    Auxiliary-only variants sum their weighted terms without ``L_C``.
    """
    if config.enable_c:
        return loss_csg(outputs, targets, config)
    return _composite(outputs, targets, config, SEMANTIC + GEOMETRIC, with_c=False)
