import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from aenet_fas.aenet import HeadOutputs, ModelConfig, build_model
from aenet_fas.errors import ConfigurationError, GenerationError
from aenet_fas.objectives import (
    SupervisionTargets,
    loss_cg,
    loss_cs,
    loss_csg,
    make_geometric_targets,
    variant_loss,
)
from aenet_fas.synthetic import ramp_map, synthetic_depth, synthetic_reflection

D = torch.float64


def rand_outputs(rng, n=1, heads=("c", "sf", "ss", "si", "gd", "gr")):
    shapes = {"c": (2,), "sf": (40,), "ss": (11,), "si": (5,), "gd": (14, 14), "gr": (14, 14)}
    names = {"c": "c_logits", "sf": "sf_logits", "ss": "ss_logits", "si": "si_logits", "gd": "gd_map", "gr": "gr_map"}
    return HeadOutputs(**{names[h]: torch.tensor(rng.standard_normal((n, *shapes[h])), dtype=D) for h in heads})


def rand_targets(rng, n=1):
    spoof = rng.integers(0, 2, n)
    return SupervisionTargets(
        label=torch.tensor(spoof),
        attributes=torch.tensor(rng.integers(0, 2, (n, 40)), dtype=D),
        spoof_type=torch.tensor(np.where(spoof == 1, rng.integers(1, 11, n), 0)),
        illumination=torch.tensor(np.where(spoof == 1, rng.integers(1, 5, n), 0)),
        gd_true=torch.tensor(rng.random((n, 14, 14)) * (spoof == 0)[:, None, None], dtype=D),
        gr_true=torch.tensor(rng.random((n, 14, 14)) * (spoof == 1)[:, None, None], dtype=D),
    )


# independent numpy formulas for a single sample ---------------------------


def np_softmax_ce(logits, k):
    z = logits - logits.max()
    return float(-(z[k] - np.log(np.exp(z).sum())))


def np_bce_mean(logits, y):
    p = 1 / (1 + np.exp(-logits))
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def np_mse(a, b):
    return float(np.sum((a - b) ** 2) / a.size)


def hand_terms(out, tgt):
    g = lambda t: t.detach().numpy()[0]  # noqa: E731
    return {
        "C": np_softmax_ce(g(out.c_logits), int(tgt.label[0])),
        "Sf": np_bce_mean(g(out.sf_logits), g(tgt.attributes)),
        "Ss": np_softmax_ce(g(out.ss_logits), int(tgt.spoof_type[0])),
        "Si": np_softmax_ce(g(out.si_logits), int(tgt.illumination[0])),
        "Gd": np_mse(g(out.gd_map), g(tgt.gd_true)),
        "Gr": np_mse(g(out.gr_map), g(tgt.gr_true)),
    }


CFG = ModelConfig.for_variant("aenet-csg")


@pytest.mark.parametrize("seed", range(5))
def test_default_weighting_against_hand_values(seed):
    rng = np.random.default_rng(seed)
    out, tgt = rand_outputs(rng), rand_targets(rng)
    h = hand_terms(out, tgt)
    cs_total, cs_terms = loss_cs(out, tgt, CFG)
    assert float(cs_total) == pytest.approx(h["C"] + 1 * h["Sf"] + 0.1 * h["Ss"] + 0.01 * h["Si"], abs=1e-9)
    cg_total, _ = loss_cg(out, tgt, CFG)
    assert float(cg_total) == pytest.approx(h["C"] + 0.1 * h["Gd"] + 0.1 * h["Gr"], abs=1e-9)
    for name in ("C", "Sf", "Ss", "Si"):
        assert float(cs_terms[name]) == pytest.approx(h[name], abs=1e-9)


def test_zero_weights_reduce_to_classification():
    rng = np.random.default_rng(0)
    out, tgt = rand_outputs(rng, 3), rand_targets(rng, 3)
    cfg = ModelConfig.for_variant("aenet-csg", lambda_f=0, lambda_s=0, lambda_i=0, lambda_d=0, lambda_r=0)
    c_only = float(torch.nn.functional.cross_entropy(out.c_logits, tgt.label))
    for fn in (loss_cs, loss_cg, loss_csg):
        assert float(fn(out, tgt, cfg).total) == pytest.approx(c_only, abs=1e-12)


@pytest.mark.parametrize("lam", ["lambda_f", "lambda_s", "lambda_i", "lambda_d", "lambda_r"])
def test_zeroing_one_weight_removes_exactly_that_term(lam):
    rng = np.random.default_rng(1)
    out, tgt = rand_outputs(rng, 2), rand_targets(rng, 2)
    full = loss_csg(out, tgt, CFG)
    reduced = loss_csg(out, tgt, ModelConfig.for_variant("aenet-csg", **{lam: 0.0}))
    term = {"lambda_f": "Sf", "lambda_s": "Ss", "lambda_i": "Si", "lambda_d": "Gd", "lambda_r": "Gr"}[lam]
    expected = float(full.total) - getattr(CFG, lam) * float(full.terms[term])
    assert float(reduced.total) == pytest.approx(expected, abs=1e-12)


def test_saturated_perfect_predictions_give_zero():
    big = 1e3
    tgt = SupervisionTargets(
        label=torch.tensor([1]),
        attributes=torch.tensor([[1.0] * 20 + [0.0] * 20], dtype=D),
        spoof_type=torch.tensor([4]),
        illumination=torch.tensor([2]),
        gd_true=torch.zeros(1, 14, 14, dtype=D),
        gr_true=torch.full((1, 14, 14), 0.5, dtype=D),
    )

    def onehot(k, n):
        v = torch.full((1, n), -big, dtype=D)
        v[0, k] = big
        return v

    out = HeadOutputs(
        c_logits=onehot(1, 2),
        sf_logits=(tgt.attributes * 2 - 1) * big,
        ss_logits=onehot(4, 11),
        si_logits=onehot(2, 5),
        gd_map=tgt.gd_true.clone(),
        gr_map=tgt.gr_true.clone(),
    )
    total, terms = loss_csg(out, tgt, CFG)
    assert float(total) == 0.0
    assert all(float(v) == 0.0 for v in terms.values())


def test_geometric_examples():
    tgt = SupervisionTargets(
        label=torch.tensor([1]), attributes=torch.zeros(1, 40, dtype=D), spoof_type=torch.tensor([3]),
        illumination=torch.tensor([1]), gd_true=torch.zeros(1, 14, 14, dtype=D), gr_true=torch.zeros(1, 14, 14, dtype=D),
    )
    out = HeadOutputs(c_logits=torch.zeros(1, 2, dtype=D), gd_map=torch.ones(1, 14, 14, dtype=D),
                      gr_map=torch.zeros(1, 14, 14, dtype=D))
    total, terms = loss_cg(out, tgt, ModelConfig.for_variant("aenet-cg"))
    assert float(terms["Gd"]) == 1.0
    assert float(terms["Gr"]) == 0.0
    assert float(total) == pytest.approx(math.log(2) + 0.1, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_mse_matches_mean_of_squares(seed):
    rng = np.random.default_rng(seed)
    out, tgt = rand_outputs(rng, 4), rand_targets(rng, 4)
    _, terms = loss_cg(out, tgt, ModelConfig.for_variant("aenet-cg"))
    diff = out.gd_map.numpy() - tgt.gd_true.numpy()
    total = 0.0
    for v in diff.ravel():
        total += v * v
    assert float(terms["Gd"]) == pytest.approx(total / diff.size, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.1, 30.0))
def test_csg_identity_and_nonnegativity(seed, scale):
    rng = np.random.default_rng(seed)
    out, tgt = rand_outputs(rng, 3), rand_targets(rng, 3)
    for f in ("c_logits", "sf_logits", "ss_logits", "si_logits"):
        setattr(out, f, getattr(out, f) * scale)
    cs, cg, csg = loss_cs(out, tgt, CFG), loss_cg(out, tgt, CFG), loss_csg(out, tgt, CFG)
    assert float(csg.total) == pytest.approx(float(cs.total + cg.total - cs.terms["C"]), abs=1e-9)
    for r in (cs, cg, csg):
        assert float(r.total) >= 0 and math.isfinite(float(r.total))


def test_losses_linear_in_weights():
    rng = np.random.default_rng(7)
    out, tgt = rand_outputs(rng, 2), rand_targets(rng, 2)
    w1 = dict(lambda_f=0.3, lambda_s=0.7, lambda_i=0.2, lambda_d=0.05, lambda_r=1.5)
    w2 = dict(lambda_f=2.0, lambda_s=0.0, lambda_i=1.1, lambda_d=0.4, lambda_r=0.25)
    for w in (w1, w2):
        r = loss_csg(out, tgt, ModelConfig.for_variant("aenet-csg", **w))
        t = r.terms
        expected = t["C"] + w["lambda_f"] * t["Sf"] + w["lambda_s"] * t["Ss"] + w["lambda_i"] * t["Si"] \
            + w["lambda_d"] * t["Gd"] + w["lambda_r"] * t["Gr"]
        assert float(r.total) == pytest.approx(float(expected), abs=1e-12)


def test_missing_referenced_head_is_a_configuration_error():
    rng = np.random.default_rng(0)
    out, tgt = rand_outputs(rng, heads=("c", "ss", "si")), rand_targets(rng)
    with pytest.raises(ConfigurationError):
        loss_cs(out, tgt, CFG)
    loss_cs(out, tgt, ModelConfig.for_variant("aenet-cs-wo-sf"))
    with pytest.raises(ConfigurationError):
        loss_cs(rand_outputs(rng, heads=("sf", "ss", "si")), tgt, ModelConfig.for_variant("aenet-s"))


def test_auxiliary_only_variant_loss():
    rng = np.random.default_rng(3)
    out, tgt = rand_outputs(rng, 2, heads=("sf", "ss", "si")), rand_targets(rng, 2)
    cfg = ModelConfig.for_variant("aenet-s")
    r = variant_loss(out, tgt, cfg)
    assert "C" not in r.terms
    assert float(r.total) == pytest.approx(float(r.terms["Sf"] + 0.1 * r.terms["Ss"] + 0.01 * r.terms["Si"]))


# --- finite differences ------------------------------------------------------


def tiny_setup():
    torch.manual_seed(0)
    cfg = ModelConfig.for_variant("aenet-csg", input_size=16, backbone_id="tiny8")
    model = build_model(cfg, seed=0).double().eval()
    rng = np.random.default_rng(0)
    x = torch.tensor(rng.standard_normal((2, 3, 16, 16)), dtype=D)
    tgt = rand_targets(rng, 2)
    return cfg, model, x, tgt


def fd_relative_errors(model, loss_of, coords_per_tensor=3, eps=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss_of().backward()
    errors = []
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in rng.choice(flat.numel(), size=min(coords_per_tensor, flat.numel()), replace=False):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_of().item()
                flat[i] = orig - eps
                down = loss_of().item()
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                # parameters outside this objective's graph have no grad
                analytic = 0.0 if p.grad is None else p.grad.view(-1)[i].item()
                scale = max(abs(numeric), abs(analytic), 1e-6)
                errors.append(abs(numeric - analytic) / scale)
    return errors


@pytest.mark.parametrize("fn", [loss_cs, loss_cg, loss_csg])
def test_parameter_gradients_match_finite_differences(fn):
    cfg, model, x, tgt = tiny_setup()
    errs = fd_relative_errors(model, lambda: fn(model(x), tgt, cfg).total)
    assert max(errs) < 1e-4


def test_output_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    out, tgt = rand_outputs(rng, 2), rand_targets(rng, 2)
    for f in ("c_logits", "sf_logits", "ss_logits", "si_logits", "gd_map", "gr_map"):
        getattr(out, f).requires_grad_(True)
    loss_csg(out, tgt, CFG).total.backward()
    eps = 1e-6
    for f in ("c_logits", "sf_logits", "ss_logits", "si_logits", "gd_map", "gr_map"):
        t = getattr(out, f)
        flat = t.detach().view(-1)
        for i in rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = loss_csg(out, tgt, CFG).total.item()
            flat[i] = orig - eps
            down = loss_csg(out, tgt, CFG).total.item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = t.grad.view(-1)[i].item()
            assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic), 1e-6)


# --- geometric targets -------------------------------------------------------


def test_zero_conventions(small_dataset):
    for s in small_dataset:
        g = make_geometric_targets(s, synthetic_depth, synthetic_reflection)
        assert g.satisfies_zero_convention(s.is_live)
        if s.is_live:
            assert not np.any(g.gr_true) and np.any(g.gd_true)
        else:
            assert not np.any(g.gd_true)


def test_live_depth_passes_through(small_dataset):
    live = next(s for s in small_dataset if s.is_live)
    g = make_geometric_targets(live, ramp_map, synthetic_reflection)
    assert np.array_equal(g.gd_true, ramp_map())


@pytest.mark.parametrize(
    "bad", [lambda s: np.ones((7, 7)), lambda s: np.full((14, 14), 1.5), lambda s: -np.ones((14, 14))]
)
def test_generator_validation(small_dataset, bad):
    live = next(s for s in small_dataset if s.is_live)
    with pytest.raises(GenerationError):
        make_geometric_targets(live, bad, synthetic_reflection)


def test_targets_reject_live_with_attack_label():
    with pytest.raises(ValueError):
        SupervisionTargets(
            label=torch.tensor([0]), attributes=torch.zeros(1, 40), spoof_type=torch.tensor([3]),
            illumination=torch.tensor([0]), gd_true=torch.zeros(1, 14, 14), gr_true=torch.zeros(1, 14, 14),
        )


def test_targets_from_samples(small_dataset):
    samples = list(small_dataset)[:6]
    t = SupervisionTargets.from_samples(samples, synthetic_depth, synthetic_reflection)
    assert t.label.tolist() == [0 if s.is_live else 1 for s in samples]
    assert tuple(t.attributes.shape) == (6, 40)
