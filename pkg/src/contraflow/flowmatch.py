"""Linear-path flow matching with subtracted contrastive negatives.

One training step, per batch item i:

1. draw eps ~ N(0, I) and t ~ U(0, 1) from the ``("flow", i)`` substream
   (normal first, then uniform — oracles must replay in this order);
2. build x_t = (1 - t) * eps + t * x and the positive target
   v_pos = x - eps;
3. build two hard-negative targets sharing the same eps: v_rand from the
   next batch item's clean latent, v_aug from a repeat/skip corruption of
   this item's latent (``("aug", i)`` substream);
4. run the model once on x_t (condition dropped to the null embedding
   with probability uncond_prob, ``("drop", i)`` substream);
5. total = pos - lambda_rand * rand - lambda_aug * aug over the three
   mean-squared errors, each averaged over batch, channels and frames.

The analytic output-gradient handed to the network backward pass is

    dL/du = 2/(B*C*T) * [(u - v_pos)
                         - lambda_rand * (u - v_rand)
                         - lambda_aug  * (u - v_aug)]

Losses accumulate in float64 regardless of the storage dtype.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig, AugmentOutcome, augment, roll_batch
from .errors import BatchTooSmallError, ShapeError
from .latent import LatentSequence
from .rng import SeededRng
from .vectorfield import VectorFieldParams, backward, forward_batch, maybe_drop_condition

logger = logging.getLogger(__name__)

# a negative term this far above the positive term usually precedes blow-up
_DIVERGENCE_RATIO = 10.0


@dataclass
class FlowSample:
    """One point on the linear noise-to-data path."""

    eps: LatentSequence
    t: float
    x_t: LatentSequence


@dataclass
class LossWeights:
    """Coefficients of the subtracted negative terms."""

    lambda_rand: float = 0.2
    lambda_aug: float = 0.2

    def __post_init__(self):
        for name in ("lambda_rand", "lambda_aug"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    pos: float
    rand: float
    aug: float
    total: float


@dataclass
class StepDetails:
    """Everything a test oracle needs to replay one training step."""

    eps: np.ndarray  # (B, C, T)
    t: np.ndarray  # (B,)
    x_t: np.ndarray  # (B, C, T)
    v_pos: np.ndarray
    v_rand: np.ndarray | None
    v_aug: np.ndarray | None
    conds_used: list
    aug_outcomes: list  # AugmentOutcome or None per item
    u: np.ndarray  # model prediction


def sample_path(x: LatentSequence, rng: SeededRng, t: float | None = None) -> FlowSample:
    """Draw (eps, t) and interpolate; pass ``t`` to pin the time (tests)."""
    eps = rng.normal(x.data.shape)
    t_val = rng.uniform(0.0, 1.0)
    if t is not None:
        t_val = float(t)
    x_t = ((1.0 - t_val) * eps + t_val * x.data).astype(np.float32)
    return FlowSample(
        eps=LatentSequence(eps, x.frame_rate),
        t=t_val,
        x_t=LatentSequence(x_t, x.frame_rate),
    )


def velocity(x: LatentSequence, eps: LatentSequence) -> LatentSequence:
    """Constant transport velocity of the linear path, x - eps."""
    if not x.same_shape(eps):
        raise ShapeError(f"velocity needs matching shapes, got {x.data.shape} vs {eps.data.shape}")
    return LatentSequence(x.data - eps.data, x.frame_rate)


def combine_losses(pos: float, rand: float, aug: float, w: LossWeights) -> LossBreakdown:
    total = pos - w.lambda_rand * rand - w.lambda_aug * aug
    return LossBreakdown(pos=float(pos), rand=float(rand), aug=float(aug), total=float(total))


def _mean_sq(diff: np.ndarray) -> float:
    d = diff.astype(np.float64, copy=False)
    return float(np.mean(d * d))


def objective_terms(
    u: np.ndarray,
    v_pos: np.ndarray,
    v_rand: np.ndarray | None,
    v_aug: np.ndarray | None,
    weights: LossWeights,
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown and dL/du for a prediction u against its three targets.

    Absent negatives contribute 0 to the breakdown and nothing to the
    gradient; u's shape (B, C, T) sets the 2/(B*C*T) normalization.
    """
    pos = _mean_sq(u - v_pos)
    rand = _mean_sq(u - v_rand) if v_rand is not None else 0.0
    aug_loss = _mean_sq(u - v_aug) if v_aug is not None else 0.0
    breakdown = combine_losses(pos, rand, aug_loss, weights)

    dL_du = (u - v_pos).astype(np.float64)
    if v_rand is not None and weights.lambda_rand != 0.0:
        dL_du -= weights.lambda_rand * (u - v_rand)
    if v_aug is not None and weights.lambda_aug != 0.0:
        dL_du -= weights.lambda_aug * (u - v_aug)
    dL_du *= 2.0 / u.size
    return breakdown, dL_du


def training_step(
    batch: list,
    params: VectorFieldParams,
    x_sil: LatentSequence,
    weights: LossWeights,
    rng: SeededRng,
    aug_cfg: AugmentConfig | None = None,
    want_details: bool = False,
):
    """One full objective evaluation with parameter gradients.

    Args:
        batch: list of (LatentSequence, token-id sequence) pairs sharing T.
        params: model parameters; gradients are returned, not applied.
        x_sil: silence latent for skip corruptions (>= max span frames).
        weights: negative-term coefficients.
        rng: step-level stream; per-item substreams are derived from it.
        aug_cfg: corruption settings (defaults match the latent frame rate).

    Returns:
        (LossBreakdown, grads dict), plus a StepDetails when requested.
    """
    if not batch:
        raise BatchTooSmallError("training_step requires a nonempty batch")
    B = len(batch)
    xs = [item[0] for item in batch]
    conds = [item[1] for item in batch]
    C, T = xs[0].data.shape
    for x in xs[1:]:
        if x.data.shape != (C, T):
            raise ShapeError("all batch items must share (channels, frames)")
    if aug_cfg is None:
        aug_cfg = AugmentConfig(frame_rate=xs[0].frame_rate)

    dtype = params.dtype
    eps = np.empty((B, C, T), dtype=dtype)
    t_vec = np.empty(B, dtype=np.float64)
    x_t = np.empty((B, C, T), dtype=dtype)
    for i, x in enumerate(xs):
        fs = sample_path(x, rng.substream(("flow", i)))
        eps[i] = fs.eps.data
        t_vec[i] = fs.t
        x_t[i] = fs.x_t.data

    x_clean = np.stack([x.data for x in xs]).astype(dtype)
    v_pos = x_clean - eps

    v_rand = None
    if B >= 2:
        rolled = roll_batch(xs)
        v_rand = np.stack([r.data for r in rolled]).astype(dtype) - eps
    elif weights.lambda_rand > 0:
        raise BatchTooSmallError("lambda_rand > 0 requires batch size >= 2")

    v_aug = None
    aug_outcomes: list[AugmentOutcome | None] = [None] * B
    if T >= 2:
        v_aug = np.empty((B, C, T), dtype=dtype)
        for i, x in enumerate(xs):
            outcome = augment(x, x_sil, rng.substream(("aug", i)), aug_cfg)
            aug_outcomes[i] = outcome
            v_aug[i] = outcome.latent.data.astype(dtype) - eps[i]
    elif weights.lambda_aug > 0:
        raise ShapeError("lambda_aug > 0 requires latents with >= 2 frames")

    conds_used = [
        maybe_drop_condition(cond, rng.substream(("drop", i)), params.config.uncond_prob)
        for i, cond in enumerate(conds)
    ]

    u, cache = forward_batch(params, x_t, t_vec, conds_used, want_cache=True)

    breakdown, dL_du = objective_terms(u, v_pos, v_rand, v_aug, weights)
    if (
        breakdown.rand > _DIVERGENCE_RATIO * breakdown.pos
        or breakdown.aug > _DIVERGENCE_RATIO * breakdown.pos
    ):
        logger.warning(
            "negative loss term dwarfs positive term (pos=%.4g rand=%.4g aug=%.4g)",
            breakdown.pos,
            breakdown.rand,
            breakdown.aug,
        )
    grads = backward(params, cache, dL_du.astype(dtype))

    if want_details:
        details = StepDetails(
            eps=eps,
            t=t_vec,
            x_t=x_t,
            v_pos=v_pos,
            v_rand=v_rand,
            v_aug=v_aug,
            conds_used=conds_used,
            aug_outcomes=aug_outcomes,
            u=u,
        )
        return breakdown, grads, details
    return breakdown, grads


def step_loss_only(
    batch: list,
    params: VectorFieldParams,
    x_sil: LatentSequence,
    weights: LossWeights,
    rng: SeededRng,
    aug_cfg: AugmentConfig | None = None,
) -> LossBreakdown:
    """The objective value alone, for finite-difference probing."""
    breakdown, _ = training_step(batch, params, x_sil, weights, rng, aug_cfg)
    return breakdown
