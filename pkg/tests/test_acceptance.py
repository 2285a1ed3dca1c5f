"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The desk-scale experiments (criteria 5-7) train two small models on 256
procedurally generated clips; everything is seeded and runs on a single CPU.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from drnet import datasets
from drnet.evaluation import (ActionClassifierConfig, disentanglement_report,
                              forecast_pose_mse, inception_score,
                              inception_score_from_probs, nn_probe, psnr, ssim,
                              train_action_classifier)
from drnet.losses import (PROB_EPS, LossWeights, discriminator_loss,
                          pose_adversarial_loss, reconstruction_loss,
                          similarity_loss, total_model_loss)
from drnet.networks import (NetworkSpec, build_content_encoder, build_decoder,
                            build_pose_encoder, build_scene_discriminator)
from drnet.prediction import rollout
from drnet.training import (ClassifierConfig, DrnetTrainer, ForecastConfig,
                            TrainConfig, load_checkpoint, save_checkpoint,
                            train_drnet, train_forecast)
from fdcheck import max_relative_grad_error

# -- desk-scale experiment parameters ----------------------------------------

DESK_SEED = 42
DESK_CLIPS = 256
DESK_FRAMES = 16
DESK_STEPS = 2000
DESK_SPEC = dict(arch="dcgan", in_channels=3, image_size=64, dim_hc=32,
                 dim_hp=8, width_mult=0.125)
DESK_K = 12


def report(criterion, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion} ({name}): {status}  {detail}")
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def desk_dataset():
    return datasets.gen_moving_digits(DESK_CLIPS, DESK_FRAMES, seed=DESK_SEED,
                                      digits=(0, 1, 2),
                                      palette=[(255, 64, 64), (64, 96, 255)])


@pytest.fixture(scope="module")
def desk_runs(desk_dataset):
    """Two trained models, beta=0.1 and beta=0, sharing everything else."""
    runs = {}
    spec = NetworkSpec(**DESK_SPEC)
    for beta in (0.1, 0.0):
        config = TrainConfig(weights=LossWeights(alpha=1.0, beta=beta),
                             batch_size=16, max_offset_K=DESK_K, steps=DESK_STEPS,
                             arch=spec, seed=0, log_every=25)
        ckpt, metrics = train_drnet(desk_dataset, config)
        runs[beta] = (ckpt, metrics)
    return runs


@pytest.fixture(scope="module")
def desk_forecaster(desk_dataset, desk_runs):
    ckpt, _ = desk_runs[0.1]
    return train_forecast(desk_dataset, ckpt, observe_len=5, predict_len=10,
                          config=ForecastConfig(steps=600, batch_size=16,
                                                hidden_size=64, seed=0))


def tiny_gradcheck_networks():
    spec = NetworkSpec(arch="dcgan", in_channels=2, image_size=8, dim_hc=4,
                       dim_hp=2, width_mult=0.125)
    enc_c = build_content_encoder(spec, seed=0).double().train()
    enc_p = build_pose_encoder(spec, seed=1).double().train()
    dec = build_decoder(spec, seed=2).double().train()
    disc = build_scene_discriminator(spec.dim_hp, seed=3).double().train()
    return spec, enc_c, enc_p, dec, disc


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    torch.manual_seed(0)
    spec, enc_c, enc_p, dec, disc = tiny_gradcheck_networks()
    x_t = torch.rand(2, 2, 8, 8, dtype=torch.float64)
    x_tk = torch.rand(2, 2, 8, 8, dtype=torch.float64)
    x_cross = torch.rand(2, 2, 8, 8, dtype=torch.float64)
    weights = LossWeights(alpha=1.0, beta=0.1)

    def eq1():  # reconstruction through both encoders and the decoder
        hc, skips = enc_c(x_t)
        return reconstruction_loss(dec(hc, enc_p(x_tk), skips), x_tk)

    def eq2():  # content similarity through the content encoder
        hc_t, _ = enc_c(x_t)
        hc_tk, _ = enc_c(x_tk)
        return similarity_loss(hc_t, hc_tk)

    with torch.no_grad():
        frozen_t = enc_p(x_t)
        frozen_same = enc_p(x_tk)
        frozen_cross = enc_p(x_cross)

    def eq3():  # discriminator loss w.r.t. discriminator parameters
        return discriminator_loss(disc(frozen_t, frozen_same),
                                  disc(frozen_t, frozen_cross))

    def eq4():  # pose-adversarial loss w.r.t. the pose encoder, C constant
        return pose_adversarial_loss(disc(enc_p(x_t), enc_p(x_tk)))

    def eq5():  # combined model objective, C constant
        hc_t, skips = enc_c(x_t)
        hc_tk, _ = enc_c(x_tk)
        hp_tk = enc_p(x_tk)
        rec = reconstruction_loss(dec(hc_t, hp_tk, skips), x_tk)
        sim = similarity_loss(hc_t, hc_tk)
        adv = pose_adversarial_loss(disc(enc_p(x_t), hp_tk))
        return total_model_loss(rec, sim, adv, weights)

    errors = {
        "eq1": max_relative_grad_error(eq1, [enc_c, enc_p, dec]),
        "eq2": max_relative_grad_error(eq2, [enc_c]),
        "eq3": max_relative_grad_error(eq3, [disc]),
        "eq4": max_relative_grad_error(eq4, [enc_p]),
        "eq5": max_relative_grad_error(eq5, [enc_c, enc_p, dec]),
    }
    elapsed = time.time() - t0
    worst = max(errors.values())
    detail = (f"worst rel err {worst:.2e} "
              f"({ {k: f'{v:.1e}' for k, v in errors.items()} }), {elapsed:.0f}s")
    report(1, "gradient correctness", worst <= 1e-3 and elapsed < 120, detail)


def test_criterion_2_closed_form_losses():
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    rec_zero = float(reconstruction_loss(x, x))
    half = torch.tensor([0.5], dtype=torch.float64)
    adv_at_half = float(pose_adversarial_loss(half))
    disc_at_half = float(discriminator_loss(half, half))
    sym_ok = all(
        abs(float(pose_adversarial_loss(torch.tensor([p], dtype=torch.float64)))
            - float(pose_adversarial_loss(torch.tensor([1 - p], dtype=torch.float64))))
        <= 1e-12
        for p in (0.1, 0.25, 0.4, 0.6, 0.9, 0.999)
    )
    ok = (rec_zero == 0.0
          and abs(adv_at_half - math.log(2.0)) <= 1e-9
          and abs(disc_at_half - 2.0 * math.log(2.0)) <= 1e-9
          and sym_ok)
    report(2, "closed-form loss values", ok,
           f"rec@identity={rec_zero}, adv@0.5={adv_at_half:.12f}, "
           f"disc@(0.5,0.5)={disc_at_half:.12f}, symmetry={sym_ok}")


def _state_clone(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _states_equal(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_criterion_3_alternation_isolation(small_digits_16):
    spec = NetworkSpec(arch="dcgan", in_channels=3, image_size=16, dim_hc=8,
                       dim_hp=3, width_mult=0.125)

    def cfg(**kw):
        base = dict(weights=LossWeights(alpha=1.0, beta=0.1), batch_size=4,
                    max_offset_K=4, steps=50, arch=spec, seed=0, log_every=50)
        base.update(kw)
        return TrainConfig(**base)

    trainer = DrnetTrainer(small_digits_16, cfg())
    isolation_ok = True
    for _ in range(50):
        trainer.iteration += 1
        model_before = [_state_clone(m) for m in (trainer.content_enc,
                                                  trainer.pose_enc, trainer.decoder)]
        trainer.step_discriminator()
        model_after = [_state_clone(m) for m in (trainer.content_enc,
                                                 trainer.pose_enc, trainer.decoder)]
        disc_before = _state_clone(trainer.discriminator)
        trainer.step_model(want_adv_metric=False)
        disc_after = _state_clone(trainer.discriminator)
        isolation_ok &= all(_states_equal(b, a)
                            for b, a in zip(model_before, model_after))
        isolation_ok &= _states_equal(disc_before, disc_after)

    a = DrnetTrainer(small_digits_16, cfg(weights=LossWeights(alpha=1.0, beta=0.0)))
    a.run()
    b = DrnetTrainer(small_digits_16, cfg(include_pose_adversary=False))
    b.run()
    removed_ok = all(
        _states_equal(_state_clone(ma), _state_clone(mb))
        for ma, mb in ((a.content_enc, b.content_enc), (a.pose_enc, b.pose_enc),
                       (a.decoder, b.decoder), (a.discriminator, b.discriminator)))
    report(3, "alternation isolation", isolation_ok and removed_ok,
           f"phase isolation over 50 steps: {isolation_ok}, "
           f"beta=0 bitwise == term-removed: {removed_ok}")


def test_criterion_4_unit_norm_invariant():
    total = 0
    worst = 0.0
    for arch, size in (("dcgan", 16), ("vgg_unet", 16)):
        spec = NetworkSpec(arch=arch, in_channels=3, image_size=size, dim_hc=8,
                           dim_hp=3, width_mult=0.125)
        enc_c = build_content_encoder(spec, seed=0)
        enc_p = build_pose_encoder(spec, seed=1)
        torch.manual_seed(0)
        # calibrate batch-norm running statistics with one training batch
        warmup = torch.rand(64, *spec.input_shape)
        enc_c.train()(warmup)
        enc_p.train()(warmup)
        enc_c.eval()
        enc_p.eval()
        with torch.no_grad():
            for _ in range(25):
                x = torch.rand(100, *spec.input_shape)
                hc, _ = enc_c(x)
                hp = enc_p(x)
                for h in (hc, hp):
                    worst = max(worst, float((h.norm(dim=1) - 1.0).abs().max()))
                total += 2 * x.shape[0]
    report(4, "unit-norm invariant", total >= 10_000 and worst <= 1e-5,
           f"{total} evaluations, worst |norm-1| = {worst:.2e}")


def test_criterion_5_desk_scale_disentanglement(desk_dataset, desk_runs):
    reports = {}
    for beta, (ckpt, _) in desk_runs.items():
        reports[beta] = disentanglement_report(
            ckpt, desk_dataset,
            ClassifierConfig(max_epochs=60, patience=12, seed=0), hidden=128)
    hc_gap = reports[0.1].acc_content_from_hc - reports[0.0].acc_content_from_hc
    hp_gap = reports[0.0].acc_content_from_hp - reports[0.1].acc_content_from_hp
    ok = hc_gap >= 0.05 and hp_gap >= 0.05
    report(5, "desk-scale disentanglement", ok,
           f"hc: {reports[0.1].acc_content_from_hc:.3f} (b=0.1) vs "
           f"{reports[0.0].acc_content_from_hc:.3f} (b=0), gap {hc_gap:+.3f}; "
           f"hp: {reports[0.1].acc_content_from_hp:.3f} (b=0.1) vs "
           f"{reports[0.0].acc_content_from_hp:.3f} (b=0), gap {hp_gap:+.3f}")


def test_criterion_6_discriminator_equilibrium(desk_runs):
    tails = {}
    for beta, (_, metrics) in desk_runs.items():
        tails[beta] = float(np.mean([m.disc_accuracy for m in metrics
                                     if m.step > DESK_STEPS - 500]))
    ok = 0.5 <= tails[0.1] <= 0.75 and tails[0.0] >= 0.9
    report(6, "discriminator equilibrium", ok,
           f"final-500 mean accuracy: beta=0.1 -> {tails[0.1]:.3f} "
           f"(need [0.5, 0.75]), beta=0 -> {tails[0.0]:.3f} (need >= 0.9)")


def test_criterion_7_forecast_quality(desk_dataset, desk_runs, desk_forecaster):
    ckpt, _ = desk_runs[0.1]
    heldout = datasets.gen_moving_digits(32, DESK_FRAMES, seed=DESK_SEED + 1,
                                         digits=(0, 1, 2),
                                         palette=[(255, 64, 64), (64, 96, 255)])
    mses = forecast_pose_mse(ckpt, desk_forecaster, heldout, observe_len=5,
                             predict_len=10)
    improvement = 1.0 - mses["model_mse"] / mses["copy_last_mse"]

    decoder = ckpt.networks["decoder"]
    seen = []
    real_forward = decoder.forward
    decoder.forward = lambda c, p, s=None: (seen.append(c.detach().clone()),
                                            real_forward(c, p, s))[1]
    try:
        result = rollout(ckpt, desk_forecaster, heldout.clips[0].frames[:5],
                         horizon=100)
    finally:
        decoder.forward = real_forward
    frames_ok = (np.isfinite(result.predicted_frames).all()
                 and result.predicted_frames.min() >= 0.0
                 and result.predicted_frames.max() <= 1.0
                 and result.predicted_frames.shape[0] == 100)
    content_ok = all(torch.equal(c, seen[0]) for c in seen)

    smoke = rollout(ckpt, desk_forecaster, heldout.clips[1].frames[:5], horizon=500)
    smoke_ok = (smoke.predicted_frames.shape[0] == 500
                and np.isfinite(smoke.predicted_frames).all())

    ok = improvement >= 0.20 and frames_ok and content_ok and smoke_ok
    report(7, "forecast quality", ok,
           f"pose MSE {mses['model_mse']:.5f} vs copy-last "
           f"{mses['copy_last_mse']:.5f} ({improvement:+.1%}, need >= +20%); "
           f"100-step frames ok: {frames_ok}, content constant: {content_ok}, "
           f"500-step smoke: {smoke_ok}")


@pytest.fixture(scope="module")
def action_setup():
    train_ds = datasets.gen_motion_regimes(150, 14, seed=7)
    clf, acc = train_action_classifier(
        train_ds, ActionClassifierConfig(max_epochs=50, patience=15,
                                         width_mult=0.25, windows_per_clip=3,
                                         seed=0))
    return clf, acc


def test_criterion_8_inception_score(action_setup):
    clf, clf_acc = action_setup

    # hand-constructed distribution sets against an independent evaluation
    hand_sets = [
        np.tile([0.25, 0.25, 0.25, 0.25], (8, 1)),
        np.eye(4)[np.arange(12) % 4],
        np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.3, 0.5]]),
        np.array([[0.6, 0.4], [0.5, 0.5], [0.9, 0.1]]),
    ]
    exact_ok = True
    for probs in hand_sets:
        marginal = probs.mean(axis=0)
        clamp = lambda v: min(max(v, PROB_EPS), 1.0 - PROB_EPS)
        kls = [sum(p * (math.log(clamp(p)) - math.log(clamp(q)))
                   for p, q in zip(row, marginal)) for row in probs]
        expected = math.exp(max(0.0, sum(kls) / len(kls)))
        exact_ok &= abs(inception_score_from_probs(probs) - expected) <= 1e-9

    rng = np.random.default_rng(0)
    bounds_ok = True
    for _ in range(50):
        k = int(rng.integers(2, 7))
        probs = rng.dirichlet(np.ones(k) * 0.5, size=int(rng.integers(1, 20)))
        probs = (probs + 1e-6) / (probs + 1e-6).sum(axis=1, keepdims=True)
        score = inception_score_from_probs(probs)
        bounds_ok &= 1.0 <= score <= k + 1e-9

    heldout = datasets.gen_motion_regimes(30, 14, seed=8)
    gt_sequences = [c.frames[:10] for c in heldout.clips]
    noise_sequences = [rng.random((10, 3, 64, 64)).astype(np.float32)
                       for _ in range(30)]
    gt_score = inception_score(clf, gt_sequences)
    noise_score = inception_score(clf, noise_sequences)

    ok = exact_ok and bounds_ok and gt_score >= 2.0 * noise_score and clf_acc >= 0.9
    report(8, "inception score", ok,
           f"hand sets exact: {exact_ok}, bounds: {bounds_ok}, classifier "
           f"acc {clf_acc:.3f} (need >= 0.9), ground-truth score {gt_score:.3f} "
           f"vs noise {noise_score:.3f} (need >= 2x)")


def test_criterion_9_metric_oracles(small_digits_16):
    a = np.full((3, 16, 16), 0.75)
    b = np.full((3, 16, 16), 0.25)
    psnr_val = psnr(a, b)
    psnr_ok = abs(psnr_val - 6.0206) <= 1e-3

    img = np.random.default_rng(0).random((3, 20, 20))
    ssim_ok = ssim(img, img) == 1.0

    # exhaustive-scan equality on a 100-frame reference set
    base = datasets.gen_moving_digits(25, 4, seed=3)
    clips16 = [datasets.VideoClip(
        frames=c.frames.reshape(4, 3, 16, 4, 16, 4).mean(axis=(3, 5)),
        content_label=c.content_label, clip_id=c.clip_id) for c in base.clips]
    ref = datasets.ClipDataset(clips=clips16, num_classes=base.num_classes,
                               metadata={})
    spec = NetworkSpec(arch="dcgan", in_channels=3, image_size=16, dim_hc=8,
                       dim_hp=3, width_mult=0.125)
    ckpt, _ = train_drnet(small_digits_16,
                          TrainConfig(weights=LossWeights(), batch_size=4,
                                      max_offset_K=3, steps=3, arch=spec, seed=0))
    rng = np.random.default_rng(1)
    queries = rng.random((4, 3, 16, 16)).astype(np.float32)
    nn_ok = True
    ckpt.eval_mode()
    with torch.no_grad():
        all_frames = np.concatenate([c.frames for c in ref.clips])
        ref_feats = ckpt.encode_pose(torch.from_numpy(all_frames)).numpy()
        q_feats = ckpt.encode_pose(torch.from_numpy(queries)).numpy()
    matches = nn_probe(ckpt, queries, ref, space="pose")
    for qi, match in enumerate(matches):
        d2 = ((ref_feats - q_feats[qi]) ** 2).sum(axis=1)
        chosen = match.clip_id * 4 + match.frame_index
        nn_ok &= bool(d2[chosen] == d2.min())

    ok = psnr_ok and ssim_ok and nn_ok and all_frames.shape[0] == 100
    report(9, "metric oracles", ok,
           f"psnr(0.5 diff) = {psnr_val:.5f} dB, ssim(a,a) = 1: {ssim_ok}, "
           f"nn probe == exhaustive scan on {all_frames.shape[0]} frames: {nn_ok}")


def test_criterion_10_determinism_and_persistence(small_digits_16, tmp_path):
    spec = NetworkSpec(arch="dcgan", in_channels=3, image_size=16, dim_hc=8,
                       dim_hp=3, width_mult=0.125)

    def cfg(steps):
        return TrainConfig(weights=LossWeights(), batch_size=4, max_offset_K=4,
                           steps=steps, arch=spec, seed=9, log_every=1)

    run_a = tmp_path / "a"
    run_b = tmp_path / "b"
    train_drnet(small_digits_16, cfg(8), run_dir=run_a)
    train_drnet(small_digits_16, cfg(8), run_dir=run_b)
    csv_ok = ((run_a / "metrics.csv").read_bytes()
              == (run_b / "metrics.csv").read_bytes())

    _, full = train_drnet(small_digits_16, cfg(20))
    ckpt, _ = train_drnet(small_digits_16, cfg(10))
    save_checkpoint(ckpt, tmp_path / "ckpt.bin")
    resumed = DrnetTrainer.resume(small_digits_16, load_checkpoint(tmp_path / "ckpt.bin"),
                                  total_steps=20)
    _, tail = resumed.run()
    resume_ok = tail == full[10:]

    container_path = tmp_path / "roundtrip.drcs"
    generated = datasets.gen_moving_digits(6, 5, seed=13)
    datasets.write_clipset(generated, container_path)
    loaded = datasets.read_clipset(container_path)
    container_ok = all(
        np.array_equal(a.frames, b.frames) and a.content_label == b.content_label
        for a, b in zip(generated.clips, loaded.clips)
    ) and loaded.metadata == generated.metadata

    ok = csv_ok and resume_ok and container_ok
    report(10, "determinism and persistence", ok,
           f"identical metrics.csv: {csv_ok}, resume == uninterrupted (10 steps): "
           f"{resume_ok}, container round-trip: {container_ok}")
