"""Length-preserving repeat/skip corruptions used as contrastive hard negatives.

TTS alignment failures show up as duplicated or dropped spans of content.
Both are simulated directly in latent space without changing the sequence
length:

* repeat: overwrite a target span with a (snapshot) copy of a source span,
* skip: shift the suffix forward over a removed span and pad the tail with
  a silence latent.

An augmentation pass picks one mode (coin flip), samples a coverage budget
(uniform on [0.2, 0.4] for repeat, [0.4, 0.8] for skip), then applies edits
with span lengths drawn uniformly between the frame counts for 0.1 s and
5.0 s until the budget is crossed. The edit that crosses the budget is
still applied, so realized coverage is always >= the budget and at least
one edit always happens.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BatchTooSmallError,
    DegenerateInputError,
    InvalidEditError,
    ShapeError,
    SpanError,
)
from .latent import LatentSequence, frames_for_seconds
from .rng import SeededRng

_MAX_EDITS = 10_000  # safety valve; never reached for sane budgets


class AugmentMode(enum.Enum):
    REPEAT = "repeat"
    SKIP = "skip"


@dataclass
class AugmentConfig:
    """Sampling distributions for corruption mode, budget and span length.

    ``p_repeat`` admits the degenerate values 0 and 1 so tests and the CLI
    can force a mode; production use keeps the 0.5 coin flip.
    """

    p_repeat: float = 0.5
    repeat_budget: tuple[float, float] = (0.2, 0.4)
    skip_budget: tuple[float, float] = (0.4, 0.8)
    span_seconds: tuple[float, float] = (0.1, 5.0)
    frame_rate: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.p_repeat <= 1.0:
            raise ValueError(f"p_repeat must be in [0, 1], got {self.p_repeat}")
        for name in ("repeat_budget", "skip_budget", "span_seconds"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} interval is empty: ({lo}, {hi})")
        if self.span_seconds[0] <= 0:
            raise ValueError("span lower bound must map to at least one frame")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")


@dataclass
class AugmentOutcome:
    """A corrupted latent plus a replayable report of what was edited.

    ``edits`` holds ``(source_start, target_start, length)`` tuples for
    repeat mode and ``(skip_start, length)`` tuples for skip mode, in
    application order. ``realized_coverage`` is the size of the union of
    edited target spans divided by the frame count.
    """

    latent: LatentSequence = field(repr=False)
    mode: AugmentMode = AugmentMode.REPEAT
    edits: list[tuple] = field(default_factory=list)
    realized_coverage: float = 0.0
    budget: float = 0.0


def sample_mode(rng: SeededRng, cfg: AugmentConfig) -> AugmentMode:
    """Repeat with probability ``cfg.p_repeat``, else skip."""
    return AugmentMode.REPEAT if rng.random() < cfg.p_repeat else AugmentMode.SKIP


def sample_budget(mode: AugmentMode, rng: SeededRng, cfg: AugmentConfig) -> float:
    """Coverage budget drawn uniformly from the mode's interval."""
    lo, hi = cfg.repeat_budget if mode is AugmentMode.REPEAT else cfg.skip_budget
    return rng.uniform(lo, hi)


def sample_span_length(T: int, rng: SeededRng, cfg: AugmentConfig) -> int:
    """Uniform integer span length between the 0.1 s and 5.0 s frame counts.

    The upper bound is clamped to T-1 so an edit can never swallow the whole
    sequence's start positions; the lower bound is clamped to 1 and, if the
    interval collapses, to the upper bound.
    """
    if T < 2:
        raise DegenerateInputError(f"need at least 2 frames to sample a span, got T={T}")
    lo = max(1, frames_for_seconds(cfg.span_seconds[0], cfg.frame_rate))
    hi = min(frames_for_seconds(cfg.span_seconds[1], cfg.frame_rate), T - 1)
    if lo > hi:
        lo = hi
    return rng.integers(lo, hi)


def repeat_overwrite(x: LatentSequence, s: int, length: int, k: int) -> LatentSequence:
    """Overwrite frames [k, k+length) with a snapshot of frames [s, s+length).

    The copy reads the pre-edit values, so overlapping source/target ranges
    behave as one simultaneous copy. Requires ``s != k``.
    """
    if s == k:
        raise InvalidEditError(f"repeat source and target start must differ (both {s})")
    T = x.frames
    if length < 1:
        raise SpanError(f"span length must be >= 1, got {length}")
    if s < 0 or s + length > T:
        raise SpanError(f"source span [{s}, {s + length}) outside [0, {T})")
    if k < 0 or k + length > T:
        raise SpanError(f"target span [{k}, {k + length}) outside [0, {T})")
    out = x.data.copy()
    out[:, k : k + length] = x.data[:, s : s + length]
    return LatentSequence(out, x.frame_rate)


def skip_shift(x: LatentSequence, s1: int, length: int, x_sil: LatentSequence) -> LatentSequence:
    """Drop frames [s1, s1+length) by shifting the suffix forward; the freed
    tail [T-length, T) is filled with the first ``length`` silence frames.
    """
    T = x.frames
    if length < 1:
        raise SpanError(f"span length must be >= 1, got {length}")
    if s1 < 0 or s1 + length > T:
        raise SpanError(f"skip span [{s1}, {s1 + length}) outside [0, {T})")
    if x_sil.channels != x.channels:
        raise ShapeError(f"silence channel mismatch: {x_sil.channels} vs {x.channels}")
    if x_sil.frames < length:
        raise SpanError(f"silence latent has {x_sil.frames} frames, need >= {length}")
    out = x.data.copy()
    out[:, s1 : T - length] = x.data[:, s1 + length : T]
    out[:, T - length :] = x_sil.data[:, :length]
    return LatentSequence(out, x.frame_rate)


def augment(
    x: LatentSequence,
    x_sil: LatentSequence,
    rng: SeededRng,
    cfg: AugmentConfig,
    mode: AugmentMode | None = None,
    budget: float | None = None,
) -> AugmentOutcome:
    """Build one failure-mode negative from a clean latent.

    ``mode`` and ``budget`` override the sampled values (used by tests and
    the CLI); when omitted they are drawn from ``cfg``. Edits compose
    sequentially: each skip samples its span against the already-edited
    sequence. Coverage is the union of target spans (repeat targets
    ``[k, k+l)``; the removed span ``[s1, s1+l)`` for skips), counted once
    per frame regardless of overlap.
    """
    T = x.frames
    if T < 2:
        raise DegenerateInputError(f"augment needs at least 2 frames, got T={T}")
    if mode is None:
        mode = sample_mode(rng, cfg)
    if budget is None:
        budget = sample_budget(mode, rng, cfg)

    covered = np.zeros(T, dtype=bool)
    edits: list[tuple] = []
    cur = x
    while True:
        if len(edits) >= _MAX_EDITS:
            raise RuntimeError(f"augmentation did not reach budget {budget} after {_MAX_EDITS} edits")
        length = sample_span_length(T, rng, cfg)
        if mode is AugmentMode.REPEAT:
            s = rng.integers(0, T - length)
            # target start uniform over [0, T-length] minus {s}
            j = rng.integers(0, T - length - 1)
            k = j if j < s else j + 1
            cur = repeat_overwrite(cur, s, length, k)
            covered[k : k + length] = True
            edits.append((s, k, length))
        else:
            s1 = rng.integers(0, T - length)
            cur = skip_shift(cur, s1, length, x_sil)
            covered[s1 : s1 + length] = True
            edits.append((s1, length))
        if int(covered.sum()) >= budget * T:
            break

    return AugmentOutcome(
        latent=cur,
        mode=mode,
        edits=edits,
        realized_coverage=int(covered.sum()) / T,
        budget=budget,
    )


def roll_batch(batch: list) -> list:
    """In-batch negatives by cyclic shift: item i is paired with item i+1 mod B."""
    if len(batch) < 2:
        raise BatchTooSmallError(f"roll_batch needs at least 2 items, got {len(batch)}")
    return batch[1:] + batch[:1]
