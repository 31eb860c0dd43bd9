"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS line when its assertions hold; pytest reports any
failure. Criterion 6 trains the full ablation grid on the default synthetic
benchmark and dominates the runtime; run it with
`pytest tests/test_acceptance.py -v -s`.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from semiphase.config import ModelConfig, RunConfig, TrainConfig
from semiphase.evaluation import compute_metrics, online_predict
from semiphase.model import build_model, normalize_features
from semiphase.prototypes import PrototypeBank, init_prototypes
from semiphase.pseudo import EmaConfig, confidence_gate, ema_update, gate_batch
from semiphase.synthdata import load_split, make_benchmark
from semiphase.tcn import TemporalRefiner
from semiphase.trainer import (
    DatasetBundle,
    StepBatch,
    Trainer,
    apply_prototype_updates,
    compute_losses,
    load_inference_model,
)

from helpers import finite_diff_grads, max_rel_error
from test_trainer import micro_batch, micro_setup, toy_bundle


def report(line):
    print(f"\n[ACCEPTANCE] {line}")


# -- 1. gradient suite ---------------------------------------------------------


def test_criterion_1_gradient_suite():
    """Analytic grads of every loss term match central finite differences."""
    started = time.time()
    cfg, student, teacher, bank, train = micro_setup(delta=0.0)  # all gates open
    batch = micro_batch(cfg)
    params = dict(student.named_parameters())

    def check(term, expect_zero=False):
        def value():
            return float(getattr(compute_losses(student, teacher, bank, None, batch, train), term))

        student.zero_grad()
        loss = getattr(compute_losses(student, teacher, bank, None, batch, train), term)
        if loss.requires_grad:
            loss.backward()
        analytic = {
            n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in params.items()
        }
        if expect_zero:
            assert all(float(g.abs().max()) == 0.0 for g in analytic.values())
        fd = finite_diff_grads(value, params, sample_per_tensor=5, seed=17)
        err = max_rel_error(analytic, fd)
        assert err < 1e-3, f"{term}: rel error {err}"
        return err

    errs = {
        "l_sup": check("l_sup"),
        "l_reg": check("l_reg"),
        "l_tri_l": check("l_tri_l"),
        # teacher-feature route: zero student gradient, and FD agrees
        "l_tri_u": check("l_tri_u", expect_zero=True),
        "l_total": check("l_total"),
    }
    elapsed = time.time() - started
    assert elapsed < 120, f"gradient suite took {elapsed:.0f}s (budget 120s)"
    worst = max(errs.values())
    report(f"criterion 1 PASS: gradient suite, worst rel error {worst:.2e}, {elapsed:.0f}s")


# -- 2. gating semantics -------------------------------------------------------


def test_criterion_2_gate_semantics():
    cfg, student, teacher, bank, train = micro_setup(delta=1.0)
    batch = micro_batch(cfg)
    with torch.no_grad():
        _, teacher_probs = teacher(batch.weak_windows)
    assert float(teacher_probs.max()) < 1.0  # premise: every max prob < delta
    batch.labeled_windows = None  # isolate the unlabeled path
    before = bank.state_hash()
    losses = compute_losses(student, teacher, bank, None, batch, train)
    apply_prototype_updates(bank, losses)
    assert float(losses.l_reg) == 0.0
    assert bank.state_hash() == before

    gen = np.random.default_rng(99)
    for _ in range(100):
        probs = torch.from_numpy(gen.dirichlet(np.ones(4), size=8))
        lo, hi = sorted(gen.random(2))
        mask_lo, _, _ = gate_batch(probs, lo)
        mask_hi, _, _ = gate_batch(probs, hi)
        assert not bool((mask_hi & ~mask_lo).any())
    report("criterion 2 PASS: closed gate gives L_Reg = 0 and an untouched bank; "
           "gating monotone over 100 random batches")


# -- 3. EMA algebra ------------------------------------------------------------


def test_criterion_3_ema_algebra():
    cfg = ModelConfig(frame_size=16, patch_size=8, embed_dim=16, depth=1, heads=2,
                      window_len=2, num_classes=3)
    worst = 0.0
    for n in (1, 5, 20):
        student = build_model(cfg, seed=1, dtype=torch.float64)
        teacher = build_model(cfg, seed=2, dtype=torch.float64)
        start = {k: v.clone() for k, v in teacher.state_dict().items()}
        for _ in range(n):
            ema_update(teacher, student, EmaConfig(alpha=0.9))
        s_state = student.state_dict()
        for name, t_val in teacher.state_dict().items():
            want = s_state[name] + 0.9 ** n * (start[name] - s_state[name])
            rel = ((t_val - want).abs() / want.abs().clamp_min(1e-12)).max()
            worst = max(worst, float(rel))
        assert worst < 1e-6, f"n={n}: rel error {worst}"
    report(f"criterion 3 PASS: EMA closed form for n in {{1,5,20}}, worst rel {worst:.2e}")


# -- 4. prototype closed forms ---------------------------------------------------


def test_criterion_4_prototype_closed_forms():
    # init equals per-class means
    gen = np.random.default_rng(3)
    feats, classes = [], []
    for c in range(3):
        for _ in range(4):
            f = normalize_features(torch.from_numpy(gen.normal(size=6)))
            feats.append((f, c))
            classes.append(c)
    bank = init_prototypes(feats, num_classes=3, margin=0.3, k_neg=3)
    for c in range(3):
        want = torch.stack([f for f, cc in feats if cc == c]).mean(dim=0)
        assert float((bank.vectors[c] - want).abs().max()) < 1e-9

    # sequential EMA updates match the unrolled recurrence
    eta = 0.9
    start = bank.vectors[1].clone()
    f_a = normalize_features(torch.from_numpy(gen.normal(size=6)))
    f_b = normalize_features(torch.from_numpy(gen.normal(size=6)))
    bank.update(1, f_a)
    bank.update(1, f_b)
    want = eta**2 * start + eta * (1 - eta) * f_a + (1 - eta) * f_b
    assert float((bank.vectors[1] - want).abs().max()) < 1e-9

    # hand-evaluated triplet instances with m = 0.3, k = 3 (clamp both sides)
    probe = PrototypeBank(4, 3, margin=0.3, k_neg=3, dtype=torch.float64)
    probe.vectors = torch.tensor(
        [[0.9, 0.0, 0.0], [0.0, 0.7, 0.15], [0.0, 0.7, 0.0], [0.0, 0.7, -0.15]],
        dtype=torch.float64,
    )
    probe.initialized = True
    f = torch.zeros(3, dtype=torch.float64)
    # negatives 1,2,3 average to (0, 0.7, 0): d_pos 0.9, d_neg 0.7 -> 0.5
    assert float(probe.triplet_loss(f, 0)) == pytest.approx(0.5, abs=1e-12)
    # target at distance 0.15 of class 1's prototype: hinge clamps to zero
    f2 = torch.tensor([0.0, 0.7, 0.0], dtype=torch.float64)
    assert float(probe.triplet_loss(f2, 2)) == 0.0
    report("criterion 4 PASS: prototype init means, EMA recurrence at 1e-9, "
           "triplet hand values incl. zero clamp")


# -- 5. metrics oracle -----------------------------------------------------------


def test_criterion_5_metrics_oracle():
    from test_evaluation import reference_metrics, track

    gen = np.random.default_rng(123)
    for _ in range(100):
        c = int(gen.integers(2, 7))
        n = int(gen.integers(1, 51))
        gt = gen.integers(0, c, size=n)
        pred = gen.integers(0, c, size=n)
        video = compute_metrics([track(pred)], [gt], num_classes=c).videos[0]
        accuracy, per_phase = reference_metrics(gt.tolist(), pred.tolist(), c)
        assert video.accuracy == accuracy
        assert set(video.per_phase) == set(per_phase)
        for phase, (precision, recall, jaccard, f1) in per_phase.items():
            got = video.per_phase[phase]
            assert (got["precision"], got["recall"], got["jaccard"], got["f1"]) == (
                precision, recall, jaccard, f1,
            )

    video = compute_metrics(
        [track([0, 1, 1, 1])], [np.array([0, 0, 1, 1])], num_classes=2
    ).videos[0]
    assert video.accuracy == pytest.approx(0.75)
    assert video.per_phase[0]["f1"] == pytest.approx(0.6667, abs=1e-4)
    report("criterion 5 PASS: metrics equal brute-force tally on 100 instances "
           "and the hand-counted example")


# -- 7. determinism & resume ------------------------------------------------------


def acceptance_run_config(out_dir, **kw):
    defaults = dict(mode="sup+tcr+clp", warmup_epochs=1, semi_epochs=2, batch_size=4,
                    delta=0.3, seed=11, labeled_stride=1, unlabeled_stride=1)
    defaults.update(kw)
    model = ModelConfig(frame_size=16, patch_size=8, embed_dim=16, depth=1, heads=2,
                        window_len=4, num_classes=3)
    return RunConfig(model=model, train=TrainConfig(**defaults), out_dir=str(out_dir))


def test_criterion_7_determinism_and_resume(tmp_path):
    runs = {}
    for name in ("a", "b"):
        Trainer(acceptance_run_config(tmp_path / name), bundle=toy_bundle()).execute()
        runs[name] = [
            json.loads(line)
            for line in (tmp_path / name / "metrics.jsonl").read_text().splitlines()
        ]
    assert len(runs["a"]) == len(runs["b"]) > 0
    for ra, rb in zip(runs["a"], runs["b"]):
        assert ra.keys() == rb.keys()
        for key, va in ra.items():
            vb = rb[key]
            if isinstance(va, float):
                assert abs(va - vb) <= 1e-6, f"field {key}: {va} vs {vb}"
            else:
                assert va == vb

    Trainer(acceptance_run_config(tmp_path / "part", semi_epochs=1),
            bundle=toy_bundle()).execute()
    Trainer(acceptance_run_config(tmp_path / "part", semi_epochs=2),
            bundle=toy_bundle()).execute(resume=True)
    resumed = [
        json.loads(line)
        for line in (tmp_path / "part" / "metrics.jsonl").read_text().splitlines()
    ]
    assert resumed == runs["a"]
    report("criterion 7 PASS: identical-seed runs match per field (<= 1e-6) and "
           "checkpoint resume reproduces the uninterrupted run step for step")


# -- 8. causality ------------------------------------------------------------------


def test_criterion_8_online_causality(rng):
    cfg = ModelConfig(frame_size=16, patch_size=8, embed_dim=16, depth=1, heads=2,
                      window_len=4, num_classes=3, tcn_levels=3, tcn_stages=2,
                      tcn_channels=8)
    model = build_model(cfg, seed=4)
    torch.manual_seed(5)
    refiner = TemporalRefiner(cfg)
    stats = (np.zeros(1), np.ones(1))
    frames = rng.random((48, 1, 16, 16)).astype(np.float32)
    for use_tcn in (False, True):
        base = online_predict(model, frames, stats,
                              refiner=refiner if use_tcn else None, batch_size=16)
        for t in (0, 17, 40):
            tampered = frames.copy()
            tampered[t + 1 :] = rng.random((48 - t - 1, 1, 16, 16)).astype(np.float32)
            out = online_predict(model, tampered, stats,
                                 refiner=refiner if use_tcn else None, batch_size=16)
            assert np.array_equal(out.phases[: t + 1], base.phases[: t + 1])
            assert np.array_equal(out.confidence[: t + 1], base.confidence[: t + 1])
    report("criterion 8 PASS: online predictions att <= t bit-identical under "
           "future-frame modification, with and without the TCN head")


# -- 6. desk-scale ablation trend (slow; runs last) ---------------------------------


TREND_SEEDS = (0, 1, 2)
TREND_MODES = ("sup", "sup+tcr", "sup+tcr+clp")


@pytest.fixture(scope="session")
def benchmark_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("benchmark") / "data"
    make_benchmark(path, seed=0, labeled_fraction=0.1)
    return path


def test_criterion_6_ablation_trend(benchmark_dir):
    started = time.time()
    bundle = DatasetBundle.from_directory(benchmark_dir)
    test_videos = load_split(benchmark_dir, "test")
    gts = [v.labels for v in test_videos]

    means = {}
    for mode in TREND_MODES:
        accs = []
        for seed in TREND_SEEDS:
            run = RunConfig(
                model=ModelConfig(),
                train=TrainConfig(mode=mode, seed=seed),
                dataset_dir=str(benchmark_dir),
                out_dir="",
            )
            state = Trainer(run, bundle=bundle).execute()
            tracks = [
                online_predict(state.teacher, v, bundle.stats, refiner=state.refiner)
                for v in test_videos
            ]
            acc = compute_metrics(tracks, gts, 5).aggregate["accuracy"]["mean"]
            accs.append(acc)
            print(f"  [trend] {mode:12s} seed {seed}: test acc {100 * acc:.2f} "
                  f"({time.time() - started:.0f}s elapsed)", flush=True)
        means[mode] = 100 * float(np.mean(accs))

    elapsed = time.time() - started
    line = " <= ".join(f"{means[m]:.2f}" for m in TREND_MODES)
    assert means["sup"] <= means["sup+tcr"] + 1e-9, means
    assert means["sup+tcr"] <= means["sup+tcr+clp"] + 1e-9, means
    gap = means["sup+tcr+clp"] - means["sup"]
    assert gap >= 2.0, f"CLP - SUP gap {gap:.2f} < 2 points ({means})"
    assert elapsed < 45 * 60, f"trend suite took {elapsed:.0f}s (budget 45 min)"
    report(f"criterion 6 PASS: mean test accuracy {line} "
           f"(gap {gap:.2f} pts, {elapsed / 60:.1f} min)")
