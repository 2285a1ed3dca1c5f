"""The four training loss terms and their weighted combination.

Reductions: the image loss averages over batch and pixels; the latent
similarity loss sums over the latent dimension and averages over the batch,
which keeps the weights meaningful across image sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigurationError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    """Per-term values for one step. ``adv_c`` drives only the discriminator
    update and is reported separately from the model total."""

    rec: float
    sim: float
    adv_ep: float
    adv_c: float
    total: float


def clamp_probability(p):
    """Clamp probabilities into [eps, 1-eps] before they enter a log."""
    return torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS)


def reconstruction_loss(predicted, target):
    """Mean squared per-pixel error between two equally shaped images."""
    if predicted.shape != target.shape:
        raise ConfigurationError(
            f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}"
        )
    return ((predicted - target) ** 2).mean()


def similarity_loss(hc_t, hc_tk):
    """Squared error between two content vectors, summed over the latent dim."""
    if hc_t.shape != hc_tk.shape:
        raise ConfigurationError(
            f"latent dim mismatch: {tuple(hc_t.shape)} vs {tuple(hc_tk.shape)}"
        )
    return ((hc_t - hc_tk) ** 2).sum(dim=-1).mean()


def discriminator_loss(prob_same, prob_diff):
    """Binary cross-entropy with target 1 on same-clip pairs and 0 on
    different-clip pairs: -[log p_same + log(1 - p_diff)], batch mean."""
    p_same = clamp_probability(prob_same)
    p_diff = clamp_probability(prob_diff)
    return -(torch.log(p_same) + torch.log(1.0 - p_diff)).mean()


def pose_adversarial_loss(prob_same):
    """Entropy-maximizing term on same-clip pairs:
    -[1/2 log p + 1/2 log(1 - p)], batch mean; minimized at p = 1/2."""
    p = clamp_probability(prob_same)
    return -(0.5 * torch.log(p) + 0.5 * torch.log(1.0 - p)).mean()


def total_model_loss(rec, sim, adv_ep, weights: LossWeights):
    """rec + alpha * sim + beta * adv_ep."""
    for name, value in (("rec", rec), ("sim", sim), ("adv_ep", adv_ep)):
        v = float(value) if not torch.is_tensor(value) else value
        if torch.is_tensor(v):
            if not torch.isfinite(v).all():
                raise ConfigurationError(f"non-finite loss component {name}")
        elif not (v == v and abs(v) != float("inf")):
            raise ConfigurationError(f"non-finite loss component {name}")
    return rec + weights.alpha * sim + weights.beta * adv_ep
