"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-5 re-run the exactness and oracle checks at their stated tolerances
and runtime budgets. Criterion 6 trains the desk-scale models (3 seeds x two loss
sets, 30 epochs, 128 subjects at 64 px) and takes roughly half an hour on one core.
Criterion 7 trains the same short run twice and compares bytes.
"""

import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

import conftest
from test_data import longhand_f
from test_losses import (_away_from, _probs, assert_grad_matches, loop_masked_l1)
from test_metrics import flat, loop_ssim
from test_networks import SMALL, expected_generator

from tgan.age import cosine_scale, encode_age
from tgan.data import MAX_AGE, MIN_AGE, build_pairs, generate_corpus, rank_indicators_anova
from tgan.losses import (LossWeights, adv_loss_d, adv_loss_g, asp_loss_codes, dm_loss_d, dm_loss_g,
                         total_generator_loss)
from tgan.metrics import dfd, image_error_metrics, indicator_metrics, psnr, ssim
from tgan.networks import (AttentionFusion, Generator, IndicatorDiscriminator, ModelConfig, PatchDiscriminator,
                           count_parameters)
from tgan.training import (TrainConfig, desk_model_config, evaluate, load_checkpoint, lr_schedule, pairs_to_batch,
                           read_log, train, train_classifiers)

ACCEPT_SEEDS = (0, 1, 2)
ACCEPT_LR = 3e-4


def report(number, ok: bool, detail: str, capsys=None):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    return ok


class Checks:
    """Collects named sub-checks so one line can summarize every failure."""

    def __init__(self):
        self.failed: list[str] = []

    def __call__(self, name: str, cond) -> None:
        if not bool(cond):
            self.failed.append(name)

    def detail(self, extra: str = "") -> str:
        body = "all sub-checks hold" if not self.failed else "failed: " + ", ".join(self.failed)
        return f"{body}{'; ' + extra if extra else ''}"


def _finish(number, checks: Checks, elapsed: float, budget: float, capsys, extra: str = ""):
    checks(f"runtime {elapsed:.1f}s <= {budget:.0f}s", elapsed <= budget)
    ok = report(number, not checks.failed, checks.detail(f"{elapsed:.1f}s{'; ' + extra if extra else ''}"), capsys)
    assert ok, checks.failed


# --------------------------------------------------------------------------- 1. unit exactness


def test_criterion_1_unit_exactness(capsys):
    t0 = time.perf_counter()
    c = Checks()
    code = encode_age(67.5)
    c("675 ones", code.bits[:675].all() and not code.bits[675:].any())
    ai, aj = encode_age(67.5), encode_age(75.0)
    dot = sum(float(x) * float(y) for x, y in zip(ai.bits, aj.bits))
    loop = dot / math.sqrt(sum(float(x) for x in ai.bits) * sum(float(y) for y in aj.bits))
    c("cosine vs loop 1e-12", abs(cosine_scale(ai, aj, "literal") - loop) <= 1e-12)

    rng = np.random.default_rng(0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pred, tgt = rng.normal(size=10), rng.normal(size=10)
        mask = rng.random(10) < 0.6
        sent = tgt.copy()
        sent[~mask] = np.nan
        for fn in (dm_loss_d, dm_loss_g):
            padded = fn(torch.tensor(pred), torch.tensor(sent), torch.from_numpy(mask)).item()
            deleted = fn(torch.tensor(pred[mask]), torch.tensor(tgt[mask]),
                         torch.ones(int(mask.sum()), dtype=torch.bool)).item()
            c(f"{fn.__name__} slot deletion seed {seed}", padded == deleted == loop_masked_l1(pred, tgt, mask))

    c("weighted sum 3.3", total_generator_loss(0.7, 0.02, 0.5, LossWeights(1, 100, 1.2)) == pytest.approx(3.3, abs=1e-12))
    cfg = TrainConfig()
    c("lr epoch 0 = 1e-5", lr_schedule(0, cfg) == 1e-5)
    c("lr floor 1e-8", cfg.lr_min == 1e-8 and min(lr_schedule(e, cfg) for e in range(30)) > 1e-8)
    c("lr trough -> floor", lr_schedule(29, cfg) - 1e-8 < 3e-8)
    c("30-epoch periodicity exact", all(lr_schedule(e, cfg) == lr_schedule(e + 30, cfg) for e in range(90)))
    _finish(1, c, time.perf_counter() - t0, 60, capsys)


# --------------------------------------------------------------------------- 2. gradients


def test_criterion_2_gradients(capsys):
    t0 = time.perf_counter()
    c = Checks()
    n = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        real, fake = _probs(rng, (8, 8)), _probs(rng, (8, 8))
        target = torch.tensor(rng.uniform(-1, 1, (1, 1, 8, 8)))
        yhat = _away_from(rng, target, (1, 1, 8, 8))
        ai, aj = encode_age(rng.uniform(55, 75)), encode_age(rng.uniform(76, 97))
        ind = torch.tensor(rng.normal(size=10))
        mask = torch.from_numpy(rng.random(10) < 0.7)
        pred = _away_from(rng, ind, (10,))
        comps = torch.tensor(rng.uniform(0.1, 2.0, 3))
        cases = {
            "adv_d/fake": (lambda f: adv_loss_d(real, f), fake),
            "adv_d/real": (lambda r: adv_loss_d(r, fake), real),
            "adv_g": (adv_loss_g, fake),
            "asp/literal": (lambda y: asp_loss_codes(y, target, target, ai, aj, "literal"), yhat),
            "asp/complement": (lambda y: asp_loss_codes(y, target, target, ai, aj, "complement"), yhat),
            "dm_d": (lambda p: dm_loss_d(p, ind, mask), pred),
            "dm_g": (lambda p: dm_loss_g(p, ind, mask), pred),
            "total": (lambda v: total_generator_loss(v[0], v[1], v[2], LossWeights()), comps),
        }
        for name, (fn, x) in cases.items():
            n += 1
            try:
                assert_grad_matches(fn, x, rtol=1e-3)
            except AssertionError:
                c(f"{name} seed {seed}", False)
    _finish(2, c, time.perf_counter() - t0, 120, capsys, f"{n} gradient checks")


# --------------------------------------------------------------------------- 3. metric oracles


def test_criterion_3_metric_oracles(capsys):
    t0 = time.perf_counter()
    c = Checks()
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(50):
        a = rng.uniform(0, 1, (16, 18))
        b = np.clip(a + rng.normal(0, 0.05 + 0.01 * k, a.shape), 0, 1)
        worst = max(worst, abs(ssim(a, b) - loop_ssim(a, b)))
    c(f"ssim oracle (max err {worst:.1e})", worst <= 1e-6)
    z = np.zeros((16, 16))
    c("psnr 20 dB", psnr(z, z + 0.1) == pytest.approx(20.0, abs=1e-9))
    c("psnr 30 dB", psnr(z, z + math.sqrt(1e-3)) == pytest.approx(30.0, abs=1e-9))
    b = z.copy()
    b[:8] = 0.5
    e = image_error_metrics(z, b)
    c("mae/mse", e["mae"] == 0.25 and e["mse"] == 0.125)
    m = indicator_metrics([1.0, 2.0], [3.0, 4.0], [True, True])
    c("indicator mae/mse/rmse", (m["mae"], m["mse"], m["rmse"]) == (2.0, 4.0, 2.0))
    c("indicator mape", m["mape"] == pytest.approx((2 / 3 + 2 / 4) / 2, abs=1e-15))
    c("indicator r2", m["r2"] == pytest.approx(-15.0, abs=1e-12))
    g = [rng.uniform(0, 1, (3, 3)) for _ in range(6)]
    r = [rng.uniform(0, 1, (3, 3)) for _ in range(6)]
    c("dfd zero", dfd(g, g, flat)["sum"] == 0.0)
    one, two = dfd(g, r, flat), dfd(g + g, r + r, flat)
    c("dfd duplication", two["sum"] == pytest.approx(2 * one["sum"]) and two["mean"] == pytest.approx(one["mean"]))
    split = dfd(g[:3], r[:3], flat)["sum"] + dfd(g[3:], r[3:], flat)["sum"]
    c("dfd additivity", split == pytest.approx(one["sum"]))
    hand = sum(np.linalg.norm(x.ravel() - y.ravel()) for x, y in zip(g, r))
    c("dfd euclidean", one["sum"] == pytest.approx(hand))
    _finish(3, c, time.perf_counter() - t0, 120, capsys)


# --------------------------------------------------------------------------- 4. shape contracts


def test_criterion_4_shapes(capsys):
    t0 = time.perf_counter()
    c = Checks()
    torch.manual_seed(0)
    big = ModelConfig(image_size=256, adv_widths=(4, 4, 4, 4))
    out256 = PatchDiscriminator(big)(torch.zeros(1, 1, 256, 256), torch.zeros(1, 1, 256, 256))
    c("28x28 patch map at 256", out256.shape == (1, 28, 28))
    side = 64
    for stride, pad in zip((2, 2, 2, 1, 1), (1, 1, 1, 0, 1)):
        side = (side + 2 * pad - 4) // stride + 1
    out64 = PatchDiscriminator(SMALL)(torch.zeros(2, 1, 64, 64), torch.zeros(2, 1, 64, 64))
    c(f"{side}x{side} patch map at 64", out64.shape == (2, side, side))
    cfg = desk_model_config(64)
    g = Generator(cfg)
    x = torch.rand(2, 1, 64, 64) * 2 - 1
    diff = torch.zeros(2, 1000)
    diff[:, 600:700] = 1
    with torch.no_grad():
        y = g(x, diff)
        y_plain = Generator(replace(cfg, input_residual=False))(x, diff)
    c("generator shape", y.shape == x.shape and y_plain.shape == x.shape)
    c("generator range open interval", bool((y.abs() < 1).all() and (y_plain.abs() < 1).all()))
    c("generator parameter formula", count_parameters(Generator(ModelConfig())) == expected_generator(ModelConfig()))
    ind = IndicatorDiscriminator(cfg)(torch.rand(3, 1, 64, 64))
    c("10 indicators", ind.shape == (3, 10))
    f = AttentionFusion(4, 6, 5).double()
    fx, fa = torch.randn(2, 7, 4, dtype=torch.float64), torch.randn(2, 7, 6, dtype=torch.float64)
    f.attend(fx, fa)
    c("attention rows sum to 1", torch.allclose(f.last_weights.sum(-1), torch.ones(2, 7, dtype=torch.float64), atol=1e-6))
    torch.nn.init.zeros_(f.w_q.weight)
    uni = f.attend(fx, fa)
    c("uniform softmax -> column mean", torch.allclose(uni, f.w_v(fx).mean(1, keepdim=True).expand_as(uni), atol=1e-6))
    fx1, fa1 = torch.randn(1, 1, 4, dtype=torch.float64), torch.randn(1, 1, 6, dtype=torch.float64)
    c("single token -> V", torch.allclose(f.attend(fx1, fa1), f.w_v(fx1), atol=1e-12))
    _finish(4, c, time.perf_counter() - t0, 60, capsys)


# --------------------------------------------------------------------------- 5. data regime


def test_criterion_5_data_regime(capsys):
    t0 = time.perf_counter()
    c = Checks()
    corpus = generate_corpus(200, 64, 0.3348, 42)
    miss, short = corpus.missing_fraction(), corpus.short_term_fraction()
    c(f"missing {miss:.4f}", abs(miss - 0.3348) <= 0.02)
    c(f"short-term {short:.4f}", abs(short - 0.6453) <= 0.05)
    ages = [v.age_years for v in corpus.visits()]
    c("ages within range", MIN_AGE <= min(ages) and max(ages) <= MAX_AGE and (MIN_AGE, MAX_AGE) == (55.0, 97.3))
    ranking = rank_indicators_anova(corpus)
    order = [p for p, _ in ranking]
    c("coupled ranked above noise", set(order[:6]) == set(range(6)))
    visits = list(corpus.visits())
    labels = np.array([v.diagnosis for v in visits])
    ind = np.stack([v.indicators for v in visits])
    mask = np.stack([v.mask for v in visits])
    oracle = [longhand_f(ind[mask[:, p], p], labels[mask[:, p]]) for p in range(10)]
    c("ranking matches longhand F", sorted(range(10), key=lambda p: -oracle[p]) == order)
    _finish(5, c, time.perf_counter() - t0, 120, capsys, f"missing={miss:.4f} short={short:.4f}")


# --------------------------------------------------------------------------- 6. end-to-end


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    t0 = time.perf_counter()
    corpus = generate_corpus(128, 64, 0.3348, 42)
    root = tmp_path_factory.mktemp("accept")
    runs = {}
    classifiers = None
    for loss in (("adv", "asp", "dm"), ("adv",)):
        for seed in ACCEPT_SEEDS:
            cfg = TrainConfig(epochs=30, lr_init=ACCEPT_LR, loss_set=loss, seed=seed, model=desk_model_config(64))
            art = train(cfg, corpus, root / f"{'_'.join(loss)}_{seed}")
            if classifiers is None:
                ck = load_checkpoint(art.ckpt_best)
                classifiers = train_classifiers(corpus, ck.folds, 0, seed=0)
            runs[(loss, seed)] = (art, evaluate(art.ckpt_best, corpus, "test", classifiers=classifiers))
    return {"corpus": corpus, "runs": runs, "elapsed": time.perf_counter() - t0, "classifiers": classifiers}


def test_criterion_6_end_to_end(e2e, capsys):
    c = Checks()
    runs = e2e["runs"]
    full = [runs[(("adv", "asp", "dm"), s)][1] for s in ACCEPT_SEEDS]
    adv = [runs[(("adv",), s)][1] for s in ACCEPT_SEEDS]
    long_full = statistics.median(r.strata["long"]["ssim"] for r in full)
    long_adv = statistics.median(r.strata["long"]["ssim"] for r in adv)
    baseline = full[0].baseline["long"]["ssim"]
    gain = statistics.median(r.strata["long"]["ssim"] - r.baseline["long"]["ssim"] for r in full)
    r2 = statistics.median(r.indicators["r2"] for r in full)
    c(f"(a) long SSIM gain {gain:+.4f} >= 0.02", gain >= 0.02)
    c(f"(b) all vs adv {long_full - long_adv:+.4f} >= 0.01", long_full - long_adv >= 0.01)
    c(f"(c) indicator R2 {r2:.3f} > 0.3", r2 > 0.3)

    # conditioning: zero and nonzero age-difference codes give different outputs
    ck = load_checkpoint(runs[(("adv", "asp", "dm"), 0)][0].ckpt_best)
    pairs = [p for p in build_pairs(e2e["corpus"]) if p.term == "long"][:4]
    b = pairs_to_batch(pairs, ck.columns)
    with torch.no_grad():
        moved = (ck.models.generator(b.x, b.diff) - ck.models.generator(b.x, torch.zeros_like(b.diff))).abs().mean()
    c(f"condition sensitivity (L1 {moved.item():.2e})", moved.item() > 0)
    acc = e2e["classifiers"]["ad_cn"].heldout_accuracy
    c(f"AD/CN classifier held-out accuracy {acc:.2f} > 0.8", acc > 0.8)

    elapsed = e2e["elapsed"]
    c(f"runtime {elapsed / 60:.1f} min <= 45", elapsed <= 45 * 60)
    extra = (f"long SSIM all={long_full:.4f} adv={long_adv:.4f} identity={baseline:.4f}; R2={r2:.3f}; "
             f"{elapsed / 60:.1f} min")
    ok = report(6, not c.failed, c.detail(extra), capsys)
    assert ok, c.failed


def test_training_example_generator_loss_decreases(e2e, capsys):
    """Training-op example: generator loss at epoch 30 below epoch 1, median over seeds."""
    drops = []
    for seed in ACCEPT_SEEDS:
        rows = read_log(e2e["runs"][(("adv", "asp", "dm"), seed)][0].log_path)
        drops.append(rows[-1]["g_total"] - rows[0]["g_total"])
    delta = statistics.median(drops)
    with capsys.disabled():
        print(f"\ngenerator loss epoch 30 - epoch 1: median {delta:+.4f} (per seed "
              + ", ".join(f"{d:+.4f}" for d in drops) + ")")
    assert delta < 0, drops


# --------------------------------------------------------------------------- 7. reproducibility


def test_criterion_7_reproducibility(tmp_path, capsys):
    corpus = generate_corpus(128, 64, 0.3348, 42)
    cfg = TrainConfig(epochs=2, lr_init=ACCEPT_LR, seed=3, model=desk_model_config(64))
    a = train(cfg, corpus, tmp_path / "a")
    b = train(cfg, corpus, tmp_path / "b")
    c = Checks()
    c("log.csv bytes", a.log_path.read_bytes() == b.log_path.read_bytes())
    c("ckpt_last bytes", a.ckpt_last.read_bytes() == b.ckpt_last.read_bytes())
    c("ckpt_best bytes", a.ckpt_best.read_bytes() == b.ckpt_best.read_bytes())
    ok = report(7, not c.failed, c.detail(f"{len(read_log(a.log_path))} epochs compared"), capsys)
    assert ok, c.failed
