"""Future-frame generation: recurrent pose forecasting with fixed content."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError
from .imgio import save_gif, save_png
from .networks import PoseForecaster
from .training import ModelCheckpoint


@dataclass
class RolloutResult:
    """Predicted pose vectors and decoded frames for one rollout."""

    predicted_poses: np.ndarray  # (horizon, pose_dim)
    predicted_frames: np.ndarray  # (horizon, C, H, W)
    metadata: dict = field(default_factory=dict)


def _as_batch(frame, spec):
    frame = torch.as_tensor(np.asarray(frame), dtype=torch.float32)
    if frame.ndim == 3:
        frame = frame.unsqueeze(0)
    if frame.ndim != 4 or tuple(frame.shape[1:]) != spec.input_shape:
        raise ConfigurationError(
            f"frame shape {tuple(frame.shape)} does not match arch input "
            f"{spec.input_shape}"
        )
    return frame


def reconstruct(model: ModelCheckpoint, content_frame, pose_frame) -> np.ndarray:
    """Decode the content code of one frame with the pose code of another.

    This is the primitive behind swap grids; with both arguments equal it is
    plain self-reconstruction.
    """
    model.eval_mode()
    x_c = _as_batch(content_frame, model.spec)
    x_p = _as_batch(pose_frame, model.spec)
    with torch.no_grad():
        content, skips = model.encode_content(x_c)
        pose = model.encode_pose(x_p)
        out = model.decode(content, pose, skips)
    return out.squeeze(0).numpy()


def rollout(model: ModelCheckpoint, forecast: PoseForecaster, observed,
            horizon: int) -> RolloutResult:
    """Generate ``horizon`` future frames after warming up on ``observed``.

    The content code (and its skip activations, when present) comes from the
    last observed frame and is reused unchanged for every generated frame.
    The recurrent state is warmed by feeding the pose code of each observed
    frame in order; afterwards each prediction is fed back as input.
    """
    observed = np.asarray(observed)
    if observed.ndim != 4 or observed.shape[0] < 1:
        raise ConfigurationError("observed must be (n>=1, C, H, W)")
    if horizon < 0:
        raise ConfigurationError("horizon must be >= 0")
    if forecast.pose_dim != model.pose_dim or forecast.content_dim != model.content_dim:
        raise ConfigurationError(
            f"forecaster dims ({forecast.pose_dim}, {forecast.content_dim}) do not "
            f"match model dims ({model.pose_dim}, {model.content_dim})"
        )
    model.eval_mode()
    forecast.eval()
    metadata = {"observe_len": int(observed.shape[0]), "horizon": int(horizon)}
    if horizon > 0 and not forecast.trained:
        metadata["untrained_forecast"] = True

    with torch.no_grad():
        frames = torch.as_tensor(observed, dtype=torch.float32)
        content, skips = model.encode_content(frames[-1:])
        state = None
        pred = None
        for t in range(frames.shape[0]):
            pose_t = model.encode_pose(frames[t:t + 1])
            pred, state = forecast.step(pose_t, content, state)
        poses = []
        decoded = []
        for _ in range(horizon):
            decoded.append(model.decode(content, pred, skips).squeeze(0).numpy())
            poses.append(pred.squeeze(0).numpy())
            pred, state = forecast.step(pred, content, state)

    pose_dim = model.pose_dim
    C, H, W = model.spec.input_shape
    return RolloutResult(
        predicted_poses=(np.stack(poses) if poses
                         else np.zeros((0, pose_dim), dtype=np.float32)),
        predicted_frames=(np.stack(decoded) if decoded
                          else np.zeros((0, C, H, W), dtype=np.float32)),
        metadata=metadata,
    )


def save_rollout(result: RolloutResult, out_dir, gif_duration_ms: int = 80) -> None:
    """Dump a rollout as numbered PNG frames plus an animated GIF."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(result.predicted_frames):
        save_png(frame, out_dir / ("frame_%05d.png" % i))
    if len(result.predicted_frames) > 0:
        save_gif(result.predicted_frames, out_dir / "rollout.gif",
                 duration_ms=gif_duration_ms)
