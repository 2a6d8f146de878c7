"""Training loop and batch scoring over annotated datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from aenet_fas.aenet import AENet, ModelConfig, forward
from aenet_fas.datamodel import AnnotatedSample, Dataset
from aenet_fas.objectives import MapGenerator, SupervisionTargets, variant_loss
from aenet_fas.scoring import ScoreRecord, head_scores, score_for_config
from aenet_fas.synthetic import render_image, synthetic_depth, synthetic_reflection

log = logging.getLogger(__name__)

ImageSource = Callable[[AnnotatedSample, int], np.ndarray]


def load_images(samples: Sequence[AnnotatedSample], size: int, source: ImageSource = render_image) -> torch.Tensor:
    batch = np.stack([source(s, size) for s in samples]).astype(np.float32)
    return (torch.from_numpy(batch) - 0.5) / 0.25


def color_distortion(images: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Random per-image brightness, contrast and saturation jitter (+-20 %)."""
    n = images.shape[0]
    shape = (n, 1, 1, 1)
    brightness = 0.8 + 0.4 * torch.rand(shape, generator=generator)
    contrast = 0.8 + 0.4 * torch.rand(shape, generator=generator)
    saturation = 0.8 + 0.4 * torch.rand(shape, generator=generator)
    x = images * 0.25 + 0.5
    x = x * brightness
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    x = (x - mean) * contrast + mean
    gray = x.mean(dim=1, keepdim=True)
    x = (x - gray) * saturation + gray
    return (x.clamp(0.0, 1.0) - 0.5) / 0.25


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)


def train_model(
    model: AENet,
    dataset: Dataset,
    seed: int = 0,
    epochs: int | None = None,
    image_source: ImageSource = render_image,
    depth_gen: MapGenerator = synthetic_depth,
    refl_gen: MapGenerator = synthetic_reflection,
) -> TrainHistory:
    """SGD on the variant objective of ``model.config``.

    Images are rendered once up front; desk-scale datasets only.
    """
    config: ModelConfig = model.config
    opt_cfg = config.optimizer
    epochs = opt_cfg.epochs if epochs is None else epochs
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")

    samples = list(dataset)
    images = load_images(samples, config.input_size, image_source)
    targets = SupervisionTargets.from_samples(samples, depth_gen, refl_gen)
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=opt_cfg.lr,
        momentum=opt_cfg.momentum,
        weight_decay=opt_cfg.weight_decay,
    )
    gen = torch.Generator().manual_seed(seed)
    history = TrainHistory()
    model.train()
    step = 0
    for epoch in range(1, epochs + 1):
        order = torch.randperm(len(samples), generator=gen)
        running, seen = 0.0, 0
        for start in range(0, len(samples), opt_cfg.batch_size):
            idx = order[start:start + opt_cfg.batch_size]
            x = images[idx]
            if config.augmentation.color_distortion:
                x = color_distortion(x, gen)
            batch_targets = SupervisionTargets(
                label=targets.label[idx],
                attributes=targets.attributes[idx],
                spoof_type=targets.spoof_type[idx],
                illumination=targets.illumination[idx],
                gd_true=targets.gd_true[idx],
                gr_true=targets.gr_true[idx],
            )
            result = variant_loss(model(x), batch_targets, config)
            optimizer.zero_grad()
            result.total.backward()
            optimizer.step()
            step += 1
            entry = {"epoch": epoch, "step": step, **result.breakdown()}
            history.steps.append(entry)
            running += entry["total"] * len(idx)
            seen += len(idx)
        history.epoch_losses.append(running / seen)
        log.info("epoch %d/%d  mean loss %.5f", epoch, epochs, history.epoch_losses[-1])
    model.eval()
    return history


def score_dataset(
    model: AENet,
    dataset: Dataset,
    batch_size: int = 32,
    image_source: ImageSource = render_image,
    fold: str | None = None,
) -> list[ScoreRecord]:
    config = model.config
    records = []
    samples = list(dataset)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        outs = forward(model, load_images(chunk, config.input_size, image_source))
        for sample, out in zip(chunk, outs):
            attr_scores = None
            if out.sf_logits is not None:
                attr_scores = tuple(torch.sigmoid(out.sf_logits.double()).tolist())
            records.append(
                ScoreRecord.from_sample(
                    sample,
                    score_for_config(out, config),
                    head_scores=head_scores(out),
                    fold=fold,
                    attr_scores=attr_scores,
                )
            )
    return records
