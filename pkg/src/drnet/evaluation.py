"""Probes and metrics: swap grids, pose interpolation, the exp-KL generation
score, PSNR/SSIM, the disentanglement classification report, nearest-neighbor
lookup, and the action classifier behind the generation score."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datasets import ClipDataset
from .errors import ConfigurationError
from .losses import PROB_EPS
from .networks import LEAKY_SLOPE, _init_weights, _scaled
from .prediction import reconstruct
from .training import ClassifierConfig, ModelCheckpoint, train_classifier_head

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP_DB = 100.0


# -- image-space metrics ----------------------------------------------------


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0,1], capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    window /= window.sum()
    return torch.from_numpy(window).reshape(1, 1, size, size)


def ssim(a, b) -> float:
    """Single-scale structural similarity with an 11x11 Gaussian window
    (sigma 1.5), averaged over channels and valid window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ConfigurationError(f"expected (C,H,W) images, got {a.shape}")
    if min(a.shape[1], a.shape[2]) < SSIM_WINDOW:
        raise ConfigurationError(f"images must be at least {SSIM_WINDOW} pixels per side")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    x = torch.from_numpy(a).unsqueeze(1)  # (C,1,H,W)
    y = torch.from_numpy(b).unsqueeze(1)

    def smooth(t):
        return F.conv2d(t, window)

    mu_x = smooth(x)
    mu_y = smooth(y)
    sigma_x = smooth(x * x) - mu_x * mu_x
    sigma_y = smooth(y * y) - mu_y * mu_y
    sigma_xy = smooth(x * y) - mu_x * mu_y
    score_map = ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)) / (
        (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2))
    return float(score_map.mean())


# -- generation score --------------------------------------------------------


def inception_score_from_probs(probs) -> float:
    """exp of the mean KL divergence between each conditional class
    distribution and their marginal; logs take probabilities clamped to
    [eps, 1-eps] exactly as in the losses."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ConfigurationError("probs must be a nonempty (N, K) matrix")
    marginal = probs.mean(axis=0)
    log_cond = np.log(np.clip(probs, PROB_EPS, 1.0 - PROB_EPS))
    log_marg = np.log(np.clip(marginal, PROB_EPS, 1.0 - PROB_EPS))
    kl = (probs * (log_cond - log_marg[None, :])).sum(axis=1)
    # KL >= 0 holds exactly for true distributions; guard against the
    # epsilon-scale negatives the clamp can introduce.
    return float(np.exp(max(0.0, kl.mean())))


def inception_score(action_classifier, sequences) -> float:
    """Score frame sequences with a trained action classifier.

    Each sequence needs at least ``frames_per_input`` frames; the first
    ``frames_per_input`` are channel-stacked into one classifier input.
    """
    sequences = list(sequences)
    if not sequences:
        raise ConfigurationError("need at least one sequence to score")
    n = action_classifier.frames_per_input
    action_classifier.eval()
    probs = []
    with torch.no_grad():
        for seq in sequences:
            seq = np.asarray(seq, dtype=np.float32)
            if seq.ndim != 4 or seq.shape[0] < n:
                raise ConfigurationError(
                    f"every sequence must be (T>={n}, C, H, W), got {seq.shape}"
                )
            stacked = torch.from_numpy(seq[:n].reshape(1, -1, *seq.shape[2:]))
            probs.append(action_classifier(stacked).squeeze(0).numpy())
    return inception_score_from_probs(np.stack(probs))


# -- action classifier -------------------------------------------------------


class ActionClassifier(nn.Module):
    """Convolutional classifier over channel-stacked frame windows: four
    stride-2 conv stages followed by a fully connected softmax layer."""

    def __init__(self, in_channels: int, image_size: int, num_classes: int,
                 width_mult: float = 1.0, frames_per_input: int = 10):
        super().__init__()
        if image_size % 16 != 0:
            raise ConfigurationError("image_size must be divisible by 16")
        if num_classes < 2:
            raise ConfigurationError("need >= 2 action classes")
        self.in_channels = in_channels
        self.image_size = image_size
        self.num_classes = num_classes
        self.frames_per_input = frames_per_input
        self._width_mult = width_mult
        # no batch norm: with few clips per class, batch statistics separate
        # the classes on their own during training and the running statistics
        # then disagree at evaluation
        layers = []
        prev = in_channels * frames_per_input
        for ch in (32, 64, 128, 256):
            ch = _scaled(ch, width_mult)
            layers += [
                nn.Conv2d(prev, ch, 4, stride=2, padding=1),
                nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            ]
            prev = ch
        self.body = nn.Sequential(*layers)
        side = image_size // 16
        self.out = nn.Linear(prev * side * side, num_classes)

    def forward(self, x):
        expected = self.in_channels * self.frames_per_input
        if x.ndim != 4 or x.shape[1] != expected:
            raise ConfigurationError(
                f"expected (B, {expected}, {self.image_size}, {self.image_size}), "
                f"got {tuple(x.shape)}"
            )
        return torch.softmax(self.out(self.body(x).flatten(1)), dim=1)


@dataclass
class ActionClassifierConfig:
    learning_rate: float = 0.001
    adam_betas: tuple = (0.9, 0.999)
    batch_size: int = 16
    max_epochs: int = 60
    patience: int = 10
    val_fraction: float = 0.25
    width_mult: float = 0.25
    windows_per_clip: int = 2
    seed: int = 0


def train_action_classifier(dataset: ClipDataset, config: ActionClassifierConfig
                            ) -> tuple[ActionClassifier, float]:
    """Train the frame-window action classifier with early stopping on a
    held-out clip split; returns (classifier, validation accuracy)."""
    n_frames = 10
    if dataset.frames_per_clip < n_frames:
        raise ConfigurationError(f"clips need at least {n_frames} frames")
    labels = dataset.labels()
    if len(np.unique(labels)) < 2:
        raise ConfigurationError("need >= 2 motion classes")
    C, H, W = dataset.frame_shape
    rng = np.random.default_rng(config.seed)

    # Window index = (clip, start offset); frames are stacked lazily per batch.
    starts = np.unique(np.linspace(0, dataset.frames_per_clip - n_frames,
                                   config.windows_per_clip, dtype=int))
    val_clips = set()
    for cls in np.unique(labels):
        members = np.nonzero(labels == cls)[0]
        rng.shuffle(members)
        n_val = max(1, int(round(config.val_fraction * len(members))))
        val_clips.update(members[:n_val].tolist())
    windows = [(i, int(s)) for i in range(len(dataset)) for s in starts]
    train_w = [w for w in windows if w[0] not in val_clips]
    val_w = [w for w in windows if w[0] in val_clips]
    if not train_w or not val_w:
        raise ConfigurationError("clip split is degenerate; add more clips")

    def assemble(ws):
        stacked = [dataset.clips[i].frames[s:s + n_frames].reshape(-1, H, W)
                   for i, s in ws]
        x = torch.from_numpy(np.stack(stacked))
        y = torch.tensor([dataset.clips[i].content_label for i, _ in ws])
        return x, y

    torch.manual_seed(int(rng.integers(2 ** 31)))
    clf = ActionClassifier(C, H, int(labels.max()) + 1, width_mult=config.width_mult,
                           frames_per_input=n_frames)
    _init_weights(clf, torch.Generator().manual_seed(int(rng.integers(2 ** 31))))
    opt = torch.optim.Adam(clf.parameters(), lr=config.learning_rate,
                           betas=config.adam_betas)
    x_val, y_val = assemble(val_w)

    best_acc, best_state, stall = -1.0, None, 0
    for _ in range(config.max_epochs):
        clf.train()
        order = rng.permutation(len(train_w))
        for lo in range(0, len(order), config.batch_size):
            chunk = [train_w[j] for j in order[lo:lo + config.batch_size]]
            if len(chunk) < 2:
                continue
            x, y = assemble(chunk)
            probs = clf(x)
            loss = -torch.log(torch.clamp(probs[torch.arange(len(y)), y],
                                          min=PROB_EPS)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        clf.eval()
        with torch.no_grad():
            acc = float((clf(x_val).argmax(dim=1) == y_val).float().mean())
        if acc > best_acc:
            best_acc, best_state, stall = acc, copy.deepcopy(clf.state_dict()), 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    clf.load_state_dict(best_state)
    clf.eval()
    return clf, best_acc


def save_action_classifier(clf: ActionClassifier, path) -> None:
    from pathlib import Path as _Path
    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": 1,
        "in_channels": clf.in_channels,
        "image_size": clf.image_size,
        "num_classes": clf.num_classes,
        "frames_per_input": clf.frames_per_input,
        "width_mult": clf._width_mult,
        "state": clf.state_dict(),
    }, path)


def load_action_classifier(path) -> ActionClassifier:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ConfigurationError(f"corrupt action classifier blob {path}: {exc}") from exc
    clf = ActionClassifier(blob["in_channels"], blob["image_size"], blob["num_classes"],
                           width_mult=blob["width_mult"],
                           frames_per_input=blob["frames_per_input"])
    clf.load_state_dict(blob["state"])
    clf.eval()
    return clf


# -- latent extraction and classification report -----------------------------


def extract_latents(model: ModelCheckpoint, dataset: ClipDataset,
                    batch_size: int = 256) -> dict:
    """Per-frame latents for a whole dataset: content codes (None in ae
    mode), pose codes, labels, clip ids, and frame indices."""
    model.eval_mode()
    frames = np.concatenate([c.frames for c in dataset.clips])
    n = frames.shape[0]
    T = dataset.frames_per_clip
    hc_parts, hp_parts = [], []
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            batch = torch.from_numpy(frames[lo:lo + batch_size])
            hp_parts.append(model.encode_pose(batch).numpy())
            if model.mode == "drnet":
                hc, _ = model.encode_content(batch)
                hc_parts.append(hc.numpy())
    return {
        "hc": np.concatenate(hc_parts) if hc_parts else None,
        "hp": np.concatenate(hp_parts),
        "labels": np.repeat(dataset.labels(), T),
        "clip_ids": np.repeat([c.clip_id for c in dataset.clips], T),
        "frame_idx": np.tile(np.arange(T), len(dataset)),
    }


@dataclass
class DisentanglementReport:
    acc_content_from_hc: float
    acc_content_from_hp: float
    beta: float
    dataset_id: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc_content_from_hc": self.acc_content_from_hc,
            "acc_content_from_hp": self.acc_content_from_hp,
            "beta": self.beta,
            "dataset_id": self.dataset_id,
            **self.extra,
        }


def _clip_level_val_indices(labels_per_clip, frames_per_clip, seed, val_fraction=0.25):
    """Hold out whole clips, stratified by class; singleton classes stay in
    the training split."""
    rng = np.random.default_rng(seed)
    val_clips = []
    for cls in np.unique(labels_per_clip):
        members = np.nonzero(labels_per_clip == cls)[0]
        if len(members) < 2:
            continue
        rng.shuffle(members)
        n_val = max(1, int(round(val_fraction * len(members))))
        val_clips.extend(members[:n_val].tolist())
    if not val_clips:
        raise ConfigurationError("no class has >= 2 clips; cannot build a validation split")
    frame_idx = []
    for clip in val_clips:
        frame_idx.extend(range(clip * frames_per_clip, (clip + 1) * frames_per_clip))
    return np.array(frame_idx)


def disentanglement_report(model: ModelCheckpoint, dataset: ClipDataset,
                           classifier_config: ClassifierConfig | None = None,
                           hidden: int = 256) -> DisentanglementReport:
    """Train one classifier head on content codes and one on pose codes and
    report held-out accuracy for each; held-out means whole unseen clips."""
    if classifier_config is None:
        classifier_config = ClassifierConfig()
    raw_labels = dataset.labels()
    uniq = np.unique(raw_labels)
    if len(uniq) < 2:
        raise ConfigurationError("dataset has a single content class")
    dense = {int(v): i for i, v in enumerate(uniq)}
    clip_labels = np.array([dense[int(v)] for v in raw_labels])

    latents = extract_latents(model, dataset)
    frame_labels = np.repeat(clip_labels, dataset.frames_per_clip)
    val_idx = _clip_level_val_indices(clip_labels, dataset.frames_per_clip,
                                      classifier_config.seed)

    _, acc_hp = train_classifier_head(latents["hp"], frame_labels, hidden,
                                      classifier_config, val_indices=val_idx)
    if model.mode == "drnet":
        _, acc_hc = train_classifier_head(latents["hc"], frame_labels, hidden,
                                          classifier_config, val_indices=val_idx)
    else:
        acc_hc = acc_hp  # single entangled latent: both probes see the same code
    beta = model.config.get("weights", {}).get("beta", 0.0)
    meta = dataset.metadata
    dataset_id = f"{meta.get('generator', 'unknown')}-seed{meta.get('seed', '?')}"
    return DisentanglementReport(
        acc_content_from_hc=float(acc_hc),
        acc_content_from_hp=float(acc_hp),
        beta=float(beta),
        dataset_id=dataset_id,
        extra={"mode": model.mode, "num_classes": int(len(uniq))},
    )


# -- nearest-neighbor probe ---------------------------------------------------


@dataclass
class NNMatch:
    clip_id: int
    frame_index: int
    distance: float
    frame: np.ndarray


def nn_probe(model: ModelCheckpoint, query_frames, reference_dataset: ClipDataset,
             space: str = "pose") -> list[NNMatch]:
    """For each query frame, the reference frame closest in latent space.

    ``space`` selects pose-only or concatenated pose+content coordinates.
    Ties resolve to the lowest (clip_id, frame index).
    """
    if space not in ("pose", "pose+content"):
        raise ConfigurationError("space must be 'pose' or 'pose+content'")
    if space == "pose+content" and model.mode != "drnet":
        raise ConfigurationError("pose+content space needs a factorized model")
    order = np.argsort([c.clip_id for c in reference_dataset.clips], kind="stable")
    clips = [reference_dataset.clips[i] for i in order]
    T = reference_dataset.frames_per_clip

    def featurize(frames):
        with torch.no_grad():
            batch = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
            hp = model.encode_pose(batch)
            if space == "pose":
                return hp.numpy()
            hc, _ = model.encode_content(batch)
            return torch.cat([hp, hc], dim=1).numpy()

    model.eval_mode()
    ref_frames = np.concatenate([c.frames for c in clips])
    ref_feats = np.concatenate([featurize(ref_frames[lo:lo + 256])
                                for lo in range(0, len(ref_frames), 256)])
    queries = np.asarray(query_frames, dtype=np.float32)
    if queries.ndim == 3:
        queries = queries[None]
    q_feats = featurize(queries)

    matches = []
    for q in q_feats:
        d2 = ((ref_feats - q[None, :]) ** 2).sum(axis=1)
        best = int(np.argmin(d2))  # first minimum = lowest (clip_id, frame)
        clip = clips[best // T]
        matches.append(NNMatch(
            clip_id=clip.clip_id,
            frame_index=best % T,
            distance=float(math.sqrt(float(d2[best]))),
            frame=ref_frames[best],
        ))
    return matches


# -- swap grid and interpolation ----------------------------------------------


@dataclass
class ImageGrid:
    """Cell (i, j) decodes row i's content with column j's pose; the render
    attaches the source images as a header row and column."""

    cells: list
    row_images: list
    col_images: list

    def render(self) -> np.ndarray:
        C, H, W = self.row_images[0].shape
        n, m = len(self.row_images), len(self.col_images)
        canvas = np.full((C, (n + 1) * H, (m + 1) * W), 0.5, dtype=np.float32)
        for j, img in enumerate(self.col_images):
            canvas[:, 0:H, (j + 1) * W:(j + 2) * W] = img
        for i, img in enumerate(self.row_images):
            canvas[:, (i + 1) * H:(i + 2) * H, 0:W] = img
        for i in range(n):
            for j in range(m):
                canvas[:, (i + 1) * H:(i + 2) * H, (j + 1) * W:(j + 2) * W] = \
                    self.cells[i][j]
        return canvas


def swap_grid(model: ModelCheckpoint, row_images, col_images) -> ImageGrid:
    """Decode every (row content, column pose) combination."""
    row_images = [np.asarray(x, dtype=np.float32) for x in row_images]
    col_images = [np.asarray(x, dtype=np.float32) for x in col_images]
    if not row_images or not col_images:
        raise ConfigurationError("swap grid needs at least one row and one column image")
    cells = [[reconstruct(model, r, c) for c in col_images] for r in row_images]
    return ImageGrid(cells=cells, row_images=row_images, col_images=col_images)


def interpolate_pose(model: ModelCheckpoint, x1, x2, steps: int) -> list[np.ndarray]:
    """Decode a linear-then-renormalized path in pose space from x1 to x2,
    keeping x1's content fixed. Endpoints reuse the encoder outputs exactly."""
    if steps < 2:
        raise ConfigurationError("steps must be >= 2")
    model.eval_mode()
    x1 = torch.as_tensor(np.asarray(x1, dtype=np.float32)).unsqueeze(0)
    x2 = torch.as_tensor(np.asarray(x2, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        content, skips = model.encode_content(x1)
        p1 = model.encode_pose(x1)
        p2 = model.encode_pose(x2)
        frames = []
        for i in range(steps):
            s = i / (steps - 1)
            if i == 0:
                pose = p1
            elif i == steps - 1:
                pose = p2
            else:
                v = (1.0 - s) * p1 + s * p2
                norm = float(v.norm())
                if norm < 1e-6:
                    raise ConfigurationError(
                        f"antipodal pose vectors: interpolation degenerates at s={s:.3f}"
                    )
                pose = v / (v.norm(dim=1, keepdim=True) + 1e-8)
            frames.append(model.decode(content, pose, skips).squeeze(0).numpy())
    return frames


# -- forecast quality ----------------------------------------------------------


def forecast_pose_mse(model: ModelCheckpoint, forecaster, dataset: ClipDataset,
                      observe_len: int, predict_len: int) -> dict:
    """Next-pose MSE of the forecaster over the predict phase, next to the
    copy-last-pose baseline that repeats the final observed pose."""
    T = dataset.frames_per_clip
    if observe_len + predict_len > T:
        raise ConfigurationError("observe_len + predict_len exceeds clip length")
    if predict_len < 1:
        raise ConfigurationError("predict_len must be >= 1")
    model.eval_mode()
    forecaster.eval()
    L = observe_len + predict_len
    frames = np.stack([c.frames[:L] for c in dataset.clips])  # (B,L,C,H,W)
    B = frames.shape[0]
    with torch.no_grad():
        flat = torch.from_numpy(frames.reshape(B * L, *dataset.frame_shape))
        poses = model.encode_pose(flat).reshape(B, L, -1).transpose(0, 1)  # (L,B,dp)
        content, _ = model.encode_content(torch.from_numpy(frames[:, observe_len - 1]))
        state = None
        pred = None
        for t in range(observe_len):
            pred, state = forecaster.step(poses[t], content, state)
        model_se = []
        for t in range(observe_len, L):
            model_se.append(((pred - poses[t]) ** 2).mean())
            pred, state = forecaster.step(pred, content, state)
        baseline = poses[observe_len - 1]
        copy_se = [((baseline - poses[t]) ** 2).mean() for t in range(observe_len, L)]
    return {
        "model_mse": float(torch.stack(model_se).mean()),
        "copy_last_mse": float(torch.stack(copy_se).mean()),
    }
