"""Training loops: alternating encoder/discriminator optimization, the pose
forecaster, classifier heads, the entangled-latent baseline, and checkpoints.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datasets import ClipDataset, sample_frame_pair, sample_pose_pair_frames
from .errors import ConfigurationError, FormatError, SamplingError, TrainingDiverged
from .losses import (LossBreakdown, LossWeights, discriminator_loss,
                     pose_adversarial_loss, reconstruction_loss, similarity_loss,
                     total_model_loss)
from .networks import (NetworkSpec, PoseForecaster, build_classifier,
                       build_content_encoder, build_decoder, build_forecaster,
                       build_pose_encoder, build_scene_discriminator,
                       build_single_encoder)

CHECKPOINT_FORMAT_VERSION = 1
METRICS_HEADER = "step,loss_rec,loss_sim,loss_adv_ep,loss_adv_c,disc_accuracy"

ForecastModel = PoseForecaster


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.002
    adam_betas: tuple = (0.5, 0.999)
    batch_size: int = 16
    max_offset_K: int = 8
    steps: int = 1000
    arch: NetworkSpec = field(default_factory=NetworkSpec)
    seed: int = 0
    disc_updates_per_model_update: int = 1
    log_every: int = 25
    shared_offset: bool = True
    # Test hook: structurally removes the pose-adversarial term from the
    # model update graph, independent of beta.
    include_pose_adversary: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (batch norm)")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.max_offset_K < 0:
            raise ConfigurationError("max_offset_K must be >= 0")
        if self.disc_updates_per_model_update < 1:
            raise ConfigurationError("disc_updates_per_model_update must be >= 1")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be >= 1")


@dataclass
class MetricRecord:
    step: int
    loss_rec: float
    loss_sim: float
    loss_adv_ep: float
    loss_adv_c: float
    disc_accuracy: float

    def csv_row(self) -> str:
        return (f"{self.step},{self.loss_rec!r},{self.loss_sim!r},"
                f"{self.loss_adv_ep!r},{self.loss_adv_c!r},{self.disc_accuracy!r}")


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["adam_betas"] = list(config.adam_betas)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = copy.deepcopy(d)
    d["weights"] = LossWeights(**d["weights"])
    d["arch"] = NetworkSpec(**d["arch"])
    d["adam_betas"] = tuple(d["adam_betas"])
    return TrainConfig(**d)


@dataclass
class ModelCheckpoint:
    """Live networks plus everything needed for exact training resumption."""

    mode: str  # "drnet" or "ae"
    spec: NetworkSpec
    networks: dict
    config: dict
    iteration: int
    rng_state: dict | None = None
    optimizer_state: dict | None = None

    @property
    def pose_dim(self) -> int:
        return self.spec.dim_hp if self.mode == "drnet" else self.spec.latent_dim

    @property
    def content_dim(self) -> int:
        return self.spec.dim_hc if self.mode == "drnet" else 0

    def eval_mode(self):
        for net in self.networks.values():
            net.eval()
        return self

    def encode_pose(self, frames):
        """Pose vectors for a (B,C,H,W) batch; the full latent in ae mode."""
        if self.mode == "drnet":
            return self.networks["pose_encoder"](frames)
        return self.networks["encoder"](frames)

    def encode_content(self, frames):
        """(content vectors, SkipState or None); (None, None) in ae mode."""
        if self.mode == "drnet":
            return self.networks["content_encoder"](frames)
        return None, None

    def decode(self, content, pose, skips=None):
        return self.networks["decoder"](content, pose, skips)


def _derive_seeds(seed: int) -> dict:
    names = ("sampler", "content_enc", "pose_enc", "decoder", "discriminator", "torch")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


def _stack_frames(frames) -> torch.Tensor:
    return torch.from_numpy(np.stack(frames))


def _check_finite(value: torch.Tensor, term: str, step: int):
    if not torch.isfinite(value).all():
        raise TrainingDiverged(f"loss term '{term}' is non-finite at step {step}")


def _set_requires_grad(module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


class _MetricsWriter:
    def __init__(self, run_dir, resuming: bool):
        self.path = Path(run_dir) / "metrics.csv" if run_dir is not None else None
        if self.path is not None:
            if resuming and self.path.exists():
                self._fh = open(self.path, "a")
            else:
                self._fh = open(self.path, "w")
                self._fh.write(METRICS_HEADER + "\n")
        else:
            self._fh = None

    def write(self, record: MetricRecord):
        if self._fh is not None:
            self._fh.write(record.csv_row() + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


class DrnetTrainer:
    """Alternating optimization: the pose-pair discriminator is updated with
    the encoders frozen, then the encoders/decoder are updated with the
    discriminator frozen."""

    def __init__(self, dataset: ClipDataset, config: TrainConfig, run_dir=None,
                 _resuming: bool = False):
        if len(dataset) < 2:
            raise SamplingError("training needs >= 2 clips (different-clip pairs)")
        if dataset.frame_shape != config.arch.input_shape:
            raise ConfigurationError(
                f"dataset frames {dataset.frame_shape} do not match arch input "
                f"{config.arch.input_shape}"
            )
        if config.max_offset_K >= dataset.frames_per_clip:
            raise ConfigurationError("max_offset_K must be <= frames_per_clip - 1")
        self.dataset = dataset
        self.config = config
        self.run_dir = Path(run_dir) if run_dir is not None else None

        seeds = _derive_seeds(config.seed)
        spec = config.arch
        self.content_enc = build_content_encoder(spec, seeds["content_enc"])
        self.pose_enc = build_pose_encoder(spec, seeds["pose_enc"])
        self.decoder = build_decoder(spec, seeds["decoder"])
        self.discriminator = build_scene_discriminator(spec.dim_hp, seeds["discriminator"])
        self.rng = np.random.default_rng(seeds["sampler"])

        model_params = (list(self.content_enc.parameters())
                        + list(self.pose_enc.parameters())
                        + list(self.decoder.parameters()))
        self.opt_model = torch.optim.Adam(model_params, lr=config.learning_rate,
                                          betas=config.adam_betas)
        self.opt_disc = torch.optim.Adam(self.discriminator.parameters(),
                                         lr=config.learning_rate, betas=config.adam_betas)
        self.iteration = 0
        self.metrics: list[MetricRecord] = []
        self.last_breakdown: LossBreakdown | None = None
        self._writer = _MetricsWriter(self.run_dir, resuming=_resuming)

    # -- phases ---------------------------------------------------------

    def _pose_pair_batch(self):
        draws = [sample_pose_pair_frames(self.dataset, self.config.max_offset_K, self.rng)
                 for _ in range(self.config.batch_size)]
        x_t = _stack_frames([d.pair.x_t for d in draws])
        x_same = _stack_frames([d.pair.x_tk for d in draws])
        x_cross = _stack_frames([d.cross_frame for d in draws])
        return x_t, x_same, x_cross

    def _frame_pair_batch(self):
        draws = [sample_frame_pair(self.dataset, self.config.max_offset_K, self.rng)
                 for _ in range(self.config.batch_size)]
        x_t = _stack_frames([d.x_t for d in draws])
        x_tk = _stack_frames([d.x_tk for d in draws])
        return x_t, x_tk

    def step_discriminator(self):
        """One ADAM step on the discriminator; the pose encoder stays frozen
        in evaluation mode and its parameters receive no gradients."""
        x_t, x_same, x_cross = self._pose_pair_batch()
        self.pose_enc.eval()
        with torch.no_grad():
            h_t = self.pose_enc(x_t)
            h_same = self.pose_enc(x_same)
            h_cross = self.pose_enc(x_cross)
        self.discriminator.train()
        prob_same = self.discriminator(h_t, h_same)
        prob_diff = self.discriminator(h_t, h_cross)
        loss = discriminator_loss(prob_same, prob_diff)
        _check_finite(loss, "adv_c", self.iteration)
        self.opt_disc.zero_grad()
        loss.backward()
        self.opt_disc.step()
        with torch.no_grad():
            accuracy = 0.5 * ((prob_same > 0.5).float().mean()
                              + (prob_diff < 0.5).float().mean())
        return float(loss.detach()), float(accuracy)

    def step_model(self, want_adv_metric: bool = True):
        """One joint ADAM step on both encoders and the decoder; the
        discriminator is frozen and receives no gradients."""
        cfg = self.config
        x_t, x_tk = self._frame_pair_batch()
        self.content_enc.train()
        self.pose_enc.train()
        self.decoder.train()
        self.discriminator.eval()
        _set_requires_grad(self.discriminator, False)
        try:
            hc_t, skips = self.content_enc(x_t)
            hc_tk, _ = self.content_enc(x_tk)
            hp_tk = self.pose_enc(x_tk)
            predicted = self.decoder(hc_t, hp_tk, skips)
            rec = reconstruction_loss(predicted, x_tk)
            sim = similarity_loss(hc_t, hc_tk)
            _check_finite(rec, "rec", self.iteration)
            _check_finite(sim, "sim", self.iteration)

            adversary_active = cfg.include_pose_adversary and cfg.weights.beta > 0
            if adversary_active:
                hp_t = self.pose_enc(x_t)
                prob_same = self.discriminator(hp_t, hp_tk)
                adv_ep = pose_adversarial_loss(prob_same)
                _check_finite(adv_ep, "adv_ep", self.iteration)
                total = total_model_loss(rec, sim, adv_ep, cfg.weights)
            else:
                # Term left out of the graph entirely so beta=0 runs update
                # bit-for-bit like runs without the term.
                total = rec + cfg.weights.alpha * sim
            _check_finite(total, "total", self.iteration)
            self.opt_model.zero_grad()
            total.backward()
            self.opt_model.step()
        finally:
            _set_requires_grad(self.discriminator, True)

        if adversary_active:
            adv_value = float(adv_ep.detach())
        elif want_adv_metric:
            adv_value = float(self._adversary_metric(x_t, x_tk))
        else:
            adv_value = 0.0
        return float(rec.detach()), float(sim.detach()), adv_value, float(total.detach())

    def _adversary_metric(self, x_t, x_tk):
        # Report-only evaluation of the pose-adversarial term; runs in eval
        # mode so no running statistic or parameter is touched.
        self.pose_enc.eval()
        with torch.no_grad():
            prob_same = self.discriminator(self.pose_enc(x_t), self.pose_enc(x_tk))
            return pose_adversarial_loss(prob_same)

    def step(self):
        """One full alternation: discriminator update(s), then model update."""
        self.iteration += 1
        log_now = (self.iteration % self.config.log_every == 0
                   or self.iteration == self.config.steps)
        loss_c = accuracy = 0.0
        for _ in range(self.config.disc_updates_per_model_update):
            loss_c, accuracy = self.step_discriminator()
        rec, sim, adv_ep, total = self.step_model(want_adv_metric=log_now)
        self.last_breakdown = LossBreakdown(rec=rec, sim=sim, adv_ep=adv_ep,
                                            adv_c=loss_c, total=total)
        if log_now:
            record = MetricRecord(self.iteration, rec, sim, adv_ep, loss_c, accuracy)
            self.metrics.append(record)
            self._writer.write(record)
        return self.iteration

    def run(self):
        while self.iteration < self.config.steps:
            self.step()
        self._writer.close()
        ckpt = self.checkpoint()
        ckpt.eval_mode()
        return ckpt, self.metrics

    # -- persistence ----------------------------------------------------

    def checkpoint(self) -> ModelCheckpoint:
        return ModelCheckpoint(
            mode="drnet",
            spec=self.config.arch,
            networks={
                "content_encoder": self.content_enc,
                "pose_encoder": self.pose_enc,
                "decoder": self.decoder,
                "discriminator": self.discriminator,
            },
            config=config_to_dict(self.config),
            iteration=self.iteration,
            rng_state={"numpy": self.rng.bit_generator.state,
                       "torch": torch.get_rng_state()},
            optimizer_state={"model": self.opt_model.state_dict(),
                             "disc": self.opt_disc.state_dict()},
        )

    def restore(self, ckpt: ModelCheckpoint):
        if ckpt.mode != "drnet":
            raise ConfigurationError(f"cannot resume a {ckpt.mode!r} checkpoint here")
        for name, net in ckpt.networks.items():
            getattr(self, _TRAINER_ATTRS[name]).load_state_dict(net.state_dict())
        if ckpt.optimizer_state is not None:
            self.opt_model.load_state_dict(ckpt.optimizer_state["model"])
            self.opt_disc.load_state_dict(ckpt.optimizer_state["disc"])
        if ckpt.rng_state is not None:
            self.rng.bit_generator.state = ckpt.rng_state["numpy"]
            torch.set_rng_state(ckpt.rng_state["torch"])
        self.iteration = ckpt.iteration
        return self

    @classmethod
    def resume(cls, dataset: ClipDataset, ckpt: ModelCheckpoint, run_dir=None,
               total_steps: int | None = None):
        config = config_from_dict(ckpt.config)
        if total_steps is not None:
            config.steps = total_steps
        trainer = cls(dataset, config, run_dir=run_dir, _resuming=True)
        trainer.restore(ckpt)
        return trainer


_TRAINER_ATTRS = {
    "content_encoder": "content_enc",
    "pose_encoder": "pose_enc",
    "decoder": "decoder",
    "discriminator": "discriminator",
}


def _write_run_config(run_dir, config: TrainConfig, config_extra):
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(run_dir) / "config.json", "w") as fh:
        json.dump({**config_to_dict(config), **(config_extra or {})}, fh,
                  indent=2, default=_json_default)


def train_drnet(dataset: ClipDataset, config: TrainConfig, run_dir=None,
                config_extra=None):
    """Train the factorized model; returns (checkpoint, metric records)."""
    if run_dir is not None:
        _write_run_config(run_dir, config, config_extra)
    return DrnetTrainer(dataset, config, run_dir=run_dir).run()


def train_ae_lstm_baseline(dataset: ClipDataset, config: TrainConfig, run_dir=None,
                           config_extra=None):
    """Baseline with a single entangled latent of dim_hc + dim_hp.

    The pipeline reduces to plain frame autoencoding: no discriminator, no
    similarity or adversarial terms; alpha and beta are ignored.
    """
    if run_dir is not None:
        _write_run_config(run_dir, config, {"mode": "ae", **(config_extra or {})})
    if dataset.frame_shape != config.arch.input_shape:
        raise ConfigurationError(
            f"dataset frames {dataset.frame_shape} do not match arch input "
            f"{config.arch.input_shape}"
        )
    seeds = _derive_seeds(config.seed)
    spec = config.arch
    encoder = build_single_encoder(spec, seeds["content_enc"])
    decoder = build_decoder(spec, seeds["decoder"])
    rng = np.random.default_rng(seeds["sampler"])
    opt = torch.optim.Adam(list(encoder.parameters()) + list(decoder.parameters()),
                           lr=config.learning_rate, betas=config.adam_betas)
    writer = _MetricsWriter(run_dir, resuming=False)
    metrics = []
    T = dataset.frames_per_clip
    encoder.train()
    decoder.train()
    for step in range(1, config.steps + 1):
        frames = []
        for _ in range(config.batch_size):
            clip = dataset.clips[int(rng.integers(len(dataset)))]
            frames.append(clip.frames[int(rng.integers(T))])
        x = _stack_frames(frames)
        z = encoder(x)
        rec = reconstruction_loss(decoder(None, z), x)
        _check_finite(rec, "rec", step)
        opt.zero_grad()
        rec.backward()
        opt.step()
        if step % config.log_every == 0 or step == config.steps:
            record = MetricRecord(step, float(rec.detach()), 0.0, 0.0, 0.0, 0.0)
            metrics.append(record)
            writer.write(record)
    writer.close()
    encoder.eval()
    decoder.eval()
    ckpt = ModelCheckpoint(
        mode="ae",
        spec=spec,
        networks={"encoder": encoder, "decoder": decoder},
        config={**config_to_dict(config), "mode": "ae"},
        iteration=config.steps,
        rng_state={"numpy": rng.bit_generator.state, "torch": torch.get_rng_state()},
        optimizer_state={"model": opt.state_dict()},
    )
    return ckpt, metrics


# -- forecaster -----------------------------------------------------------


@dataclass
class ForecastConfig:
    learning_rate: float = 0.002
    adam_betas: tuple = (0.5, 0.999)
    batch_size: int = 16
    steps: int = 400
    hidden_size: int = 256
    num_layers: int = 2
    seed: int = 0


def _forecast_sequence_length(T: int, observe_len: int, predict_len: int) -> int:
    # Degenerate protocol: no self-fed phase at all.
    if predict_len == 0:
        return observe_len
    return min(T, max(observe_len + predict_len, 20))


def train_forecast(dataset: ClipDataset, model: ModelCheckpoint, observe_len: int,
                   predict_len: int, config: ForecastConfig) -> PoseForecaster:
    """Train the recurrent pose predictor on top of a frozen model.

    Ground-truth poses are fed during the observe phase; the model's own
    previous prediction is fed afterwards. The content vector comes from
    frame observe_len - 1 and is repeated at every step. The l2 loss covers
    the next-step outputs of both phases.
    """
    T = dataset.frames_per_clip
    if observe_len < 1 or predict_len < 0:
        raise ConfigurationError("observe_len must be >= 1 and predict_len >= 0")
    if observe_len + predict_len > T:
        raise ConfigurationError(
            f"observe_len + predict_len = {observe_len + predict_len} exceeds T = {T}"
        )
    model.eval_mode()
    forecaster = build_forecaster(model.pose_dim, model.content_dim, config.seed,
                                  hidden_size=config.hidden_size,
                                  num_layers=config.num_layers)
    opt = torch.optim.Adam(forecaster.parameters(), lr=config.learning_rate,
                           betas=config.adam_betas)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).generate_state(1)[0])
    L = _forecast_sequence_length(T, observe_len, predict_len)

    for step in range(1, config.steps + 1):
        idx = rng.integers(len(dataset), size=config.batch_size)
        frames = np.stack([dataset.clips[i].frames[:L] for i in idx])  # (B,L,C,H,W)
        batch = torch.from_numpy(frames)
        B = batch.shape[0]
        with torch.no_grad():
            flat = batch.reshape(B * L, *dataset.frame_shape)
            poses = model.encode_pose(flat).reshape(B, L, -1).transpose(0, 1)
            content, _ = model.encode_content(batch[:, observe_len - 1])

        forecaster.train()
        state = None
        loss = 0.0
        prev_pred = None
        for t in range(L - 1):
            pose_in = poses[t] if t < observe_len else prev_pred
            pred, state = forecaster.step(pose_in, content, state)
            loss = loss + ((pred - poses[t + 1]) ** 2).mean()
            prev_pred = pred
        loss = loss / (L - 1)
        _check_finite(loss, "forecast", step)
        opt.zero_grad()
        loss.backward()
        opt.step()

    forecaster.observe_len = observe_len
    forecaster.predict_len = predict_len
    forecaster.trained = True
    forecaster.eval()
    return forecaster


# -- classifier heads ------------------------------------------------------


@dataclass
class ClassifierConfig:
    learning_rate: float = 0.001
    adam_betas: tuple = (0.9, 0.999)
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.2
    dropout: float = 0.5
    seed: int = 0


def train_classifier_head(features, labels, hidden: int, config: ClassifierConfig,
                          val_indices=None):
    """Train a two-layer head with ADAM and early stopping on a held-out
    validation split; returns (classifier, best validation accuracy)."""
    features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ConfigurationError("features must be (N, D) aligned with labels (N,)")
    classes = torch.unique(labels)
    if classes.numel() < 2:
        raise ConfigurationError("classification needs >= 2 classes present")
    num_classes = int(labels.max()) + 1

    rng = np.random.default_rng(config.seed)
    n = features.shape[0]
    if val_indices is None:
        order = rng.permutation(n)
        n_val = max(1, int(round(config.val_fraction * n)))
        val_idx = order[:n_val]
        train_idx = order[n_val:]
    else:
        val_idx = np.asarray(val_indices)
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        train_idx = np.nonzero(mask)[0]
    if len(train_idx) < 2 or len(val_idx) < 1:
        raise ConfigurationError("train/validation split is degenerate")

    torch.manual_seed(int(rng.integers(2 ** 31)))
    clf = build_classifier(features.shape[1], hidden, num_classes,
                           seed=int(rng.integers(2 ** 31)), dropout=config.dropout)
    opt = torch.optim.Adam(clf.parameters(), lr=config.learning_rate,
                           betas=config.adam_betas)

    x_val = features[val_idx]
    y_val = labels[val_idx]
    best_acc = -1.0
    best_state = None
    stall = 0
    for _ in range(config.max_epochs):
        clf.train()
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            idx = train_idx[order[start:start + config.batch_size]]
            if len(idx) < 2:
                continue  # batch norm needs >= 2 rows
            probs = clf(features[idx])
            loss = -torch.log(torch.clamp(probs[torch.arange(len(idx)), labels[idx]],
                                          min=1e-7)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        clf.eval()
        with torch.no_grad():
            acc = float((clf(x_val).argmax(dim=1) == y_val).float().mean())
        if acc > best_acc:
            best_acc = acc
            best_state = copy.deepcopy(clf.state_dict())
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    clf.load_state_dict(best_state)
    clf.eval()
    return clf, best_acc


# -- checkpoint files ------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_suffix(".json") if path.suffix else Path(str(path) + ".json")


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Write the binary parameter blob plus its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "mode": ckpt.mode,
        "spec": asdict(ckpt.spec),
        "config": ckpt.config,
        "iteration": ckpt.iteration,
        "networks": {name: net.state_dict() for name, net in ckpt.networks.items()},
        "optimizers": ckpt.optimizer_state,
        "rng": ckpt.rng_state,
    }
    torch.save(blob, path)
    sidecar = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "mode": ckpt.mode,
        "arch": ckpt.spec.arch,
        "image_size": ckpt.spec.image_size,
        "dim_hc": ckpt.spec.dim_hc,
        "dim_hp": ckpt.spec.dim_hp,
        "seed": ckpt.config.get("seed"),
        "iteration": ckpt.iteration,
        "decoder_upsampling": ("transposed_conv" if ckpt.spec.arch == "dcgan"
                               else "nearest_conv"),
        "config": ckpt.config,
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, default=_json_default)


def _build_networks(mode: str, spec: NetworkSpec) -> dict:
    if mode == "drnet":
        return {
            "content_encoder": build_content_encoder(spec, 0),
            "pose_encoder": build_pose_encoder(spec, 0),
            "decoder": build_decoder(spec, 0),
            "discriminator": build_scene_discriminator(spec.dim_hp, 0),
        }
    if mode == "ae":
        return {"encoder": build_single_encoder(spec, 0), "decoder": build_decoder(spec, 0)}
    raise FormatError(f"unknown checkpoint mode {mode!r}")


def load_checkpoint(path) -> ModelCheckpoint:
    """Read a checkpoint written by ``save_checkpoint``; forward outputs of
    the restored networks match the saved ones bitwise."""
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.exists():
        raise FormatError(f"missing checkpoint sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format_version "
                          f"{sidecar.get('format_version')}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"corrupt checkpoint blob {path}: {exc}") from exc
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError("blob format_version does not match sidecar")
    if sidecar.get("arch") != blob["spec"]["arch"]:
        raise FormatError(
            f"sidecar arch {sidecar.get('arch')!r} does not match blob "
            f"arch {blob['spec']['arch']!r}"
        )
    spec = NetworkSpec(**blob["spec"])
    networks = _build_networks(blob["mode"], spec)
    for name, net in networks.items():
        net.load_state_dict(blob["networks"][name])
        net.eval()
    return ModelCheckpoint(
        mode=blob["mode"],
        spec=spec,
        networks=networks,
        config=blob["config"],
        iteration=blob["iteration"],
        rng_state=blob["rng"],
        optimizer_state=blob["optimizers"],
    )


def save_classifier_head(clf, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "input_dim": clf.input_dim,
        "hidden": clf.hidden_layer[0].out_features,
        "num_classes": clf.num_classes,
        "dropout": clf.hidden_layer[3].p,
        "state": clf.state_dict(),
    }, path)


def load_classifier_head(path):
    path = Path(path)
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"corrupt classifier blob {path}: {exc}") from exc
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError("unsupported classifier format_version")
    clf = build_classifier(blob["input_dim"], blob["hidden"], blob["num_classes"],
                           seed=0, dropout=blob["dropout"])
    clf.load_state_dict(blob["state"])
    clf.eval()
    return clf


def save_forecaster(model: PoseForecaster, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "pose_dim": model.pose_dim,
        "content_dim": model.content_dim,
        "hidden_size": model.hidden_size,
        "num_layers": model.num_layers,
        "observe_len": model.observe_len,
        "predict_len": model.predict_len,
        "trained": model.trained,
        "state": model.state_dict(),
    }
    torch.save(blob, path)
    with open(_sidecar_path(path), "w") as fh:
        json.dump({k: blob[k] for k in
                   ("format_version", "pose_dim", "content_dim", "hidden_size",
                    "num_layers", "observe_len", "predict_len", "trained")},
                  fh, indent=2)


def load_forecaster(path) -> PoseForecaster:
    path = Path(path)
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"corrupt forecaster blob {path}: {exc}") from exc
    if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatError("unsupported forecaster format_version")
    model = PoseForecaster(blob["pose_dim"], blob["content_dim"],
                           hidden_size=blob["hidden_size"], num_layers=blob["num_layers"])
    model.load_state_dict(blob["state"])
    model.observe_len = blob["observe_len"]
    model.predict_len = blob["predict_len"]
    model.trained = blob["trained"]
    model.eval()
    return model
