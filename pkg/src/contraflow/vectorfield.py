"""Learnable conditional vector field with hand-derived reverse-mode gradients.

The network predicts, per output frame, the transport velocity from a
local window of the noisy latent, a sinusoidal embedding of the scalar
time, and a token embedding aligned to the frame. Alignment uses
nearest-neighbor stretching of the token sequence to the frame axis; an
absent condition is replaced by a learned null embedding, which is what
classifier-free guidance samples against at inference.

Architecture per frame (all frames share weights)::

    z = [window(x_t) | time_emb(t) | cond_emb]        # C*W + Dt + E
    h_0 = tanh(z  W_0 + b_0)                          # input projection
    h_i = tanh(h_{i-1} W_i + b_i)   i = 1..L-1        # hidden layers
    u   = h_{L-1} W_out + b_out                       # per-frame velocity

Gradients are written out by hand (no autodiff dependency) and verified
against central finite differences in the test suite and the `gradcheck`
CLI subcommand. Forward/backward are dtype-polymorphic: training runs in
float32, while gradient checking promotes parameters to float64 shadows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import VocabError
from .latent import LatentSequence
from .rng import SeededRng


@dataclass
class ModelConfig:
    """Sizes for the windowed per-frame network."""

    vocab_size: int = 16
    channels: int = 8
    embed_dim: int = 16
    hidden_dim: int = 64
    num_layers: int = 3
    context_window: int = 5
    time_embed_dim: int = 16
    pos_embed_dim: int = 8
    uncond_prob: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "channels", "embed_dim", "hidden_dim", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.context_window < 1 or self.context_window % 2 == 0:
            raise ValueError(f"context_window must be odd and >= 1, got {self.context_window}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even and >= 2, got {self.time_embed_dim}")
        if self.pos_embed_dim < 0 or self.pos_embed_dim % 2 != 0:
            raise ValueError(f"pos_embed_dim must be even and >= 0, got {self.pos_embed_dim}")
        if not 0.0 <= self.uncond_prob < 1.0:
            raise ValueError(f"uncond_prob must be in [0, 1), got {self.uncond_prob}")

    @property
    def input_dim(self) -> int:
        return (
            self.channels * self.context_window
            + self.time_embed_dim
            + self.pos_embed_dim
            + self.embed_dim
        )

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        """(weight, bias) shapes for the input projection and hidden layers."""
        shapes = [((self.input_dim, self.hidden_dim), (self.hidden_dim,))]
        for _ in range(self.num_layers - 1):
            shapes.append(((self.hidden_dim, self.hidden_dim), (self.hidden_dim,)))
        return shapes

    def param_count(self) -> int:
        n = self.vocab_size * self.embed_dim + self.embed_dim
        for (wi, wo), (b,) in self.layer_shapes():
            n += wi * wo + b
        n += self.hidden_dim * self.channels + self.channels
        return n


@dataclass
class VectorFieldParams:
    """All learnable arrays, in the declaration order used by serialization."""

    config: ModelConfig
    token_embedding: np.ndarray = field(repr=False)  # (vocab, E)
    null_embedding: np.ndarray = field(repr=False)  # (E,)
    layer_weights: list = field(repr=False, default_factory=list)
    layer_biases: list = field(repr=False, default_factory=list)
    output_weight: np.ndarray = field(repr=False, default=None)
    output_bias: np.ndarray = field(repr=False, default=None)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("token_embedding", self.token_embedding), ("null_embedding", self.null_embedding)]
        for i, (w, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            out.append((f"layer{i}_weight", w))
            out.append((f"layer{i}_bias", b))
        out.append(("output_weight", self.output_weight))
        out.append(("output_bias", self.output_bias))
        return out

    @property
    def dtype(self):
        return self.output_weight.dtype

    def astype(self, dtype) -> "VectorFieldParams":
        return VectorFieldParams(
            config=self.config,
            token_embedding=self.token_embedding.astype(dtype),
            null_embedding=self.null_embedding.astype(dtype),
            layer_weights=[w.astype(dtype) for w in self.layer_weights],
            layer_biases=[b.astype(dtype) for b in self.layer_biases],
            output_weight=self.output_weight.astype(dtype),
            output_bias=self.output_bias.astype(dtype),
        )

    def copy(self) -> "VectorFieldParams":
        return self.astype(self.dtype)


def init_params(cfg: ModelConfig, rng: SeededRng, dtype=np.float32) -> VectorFieldParams:
    """Glorot-uniform dense layers, normal(0, 0.02) embeddings, zero biases."""
    tok = (0.02 * rng.normal((cfg.vocab_size, cfg.embed_dim), dtype=np.float64)).astype(dtype)
    null = (0.02 * rng.normal((cfg.embed_dim,), dtype=np.float64)).astype(dtype)
    weights, biases = [], []
    for (fan_in, fan_out), (bdim,) in cfg.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform_array((fan_in, fan_out), -limit, limit, dtype=dtype))
        biases.append(np.zeros(bdim, dtype=dtype))
    limit = np.sqrt(6.0 / (cfg.hidden_dim + cfg.channels))
    out_w = rng.uniform_array((cfg.hidden_dim, cfg.channels), -limit, limit, dtype=dtype)
    out_b = np.zeros(cfg.channels, dtype=dtype)
    return VectorFieldParams(cfg, tok, null, weights, biases, out_w, out_b)


def time_embedding(t, dim: int, dtype) -> np.ndarray:
    """Sinusoidal features of scalar time(s); shape (B, dim) for a length-B t."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    k = np.arange(half, dtype=np.float64)
    freqs = 1000.0 ** (k / max(1, half - 1))
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def align_tokens_to_frames(n_tokens: int, n_frames: int) -> np.ndarray:
    """Token index per frame by nearest-neighbor stretch (frame j -> floor(j*L/T))."""
    j = np.arange(n_frames, dtype=np.int64)
    return (j * n_tokens) // n_frames


def token_phase(n_tokens: int | None, n_frames: int) -> np.ndarray:
    """Per-frame position inside the aligned token's span, scaled to [0, 1].

    A token stretched over s frames contributes phases 0, 1/(s-1), ..., 1
    (0.5 when s == 1). Without this feature the field cannot separate
    frames that share a token but sit at different offsets inside its span,
    and it collapses to predicting the span average. The unconditional
    branch has no alignment and falls back to whole-sequence position.
    """
    j = np.arange(n_frames, dtype=np.int64)
    if n_tokens is None:
        return j.astype(np.float64) / max(1, n_frames - 1)
    owner = (j * n_tokens) // n_frames
    starts = np.searchsorted(owner, owner, side="left")
    spans = np.searchsorted(owner, owner, side="right") - 1 - starts
    return np.where(spans > 0, (j - starts) / np.maximum(spans, 1), 0.5)


def position_embedding(phases: np.ndarray, dim: int, dtype) -> np.ndarray:
    """Sinusoidal features of per-frame phases; shape (..., dim)."""
    flat = time_embedding(np.reshape(phases, -1), dim, dtype)
    return flat.reshape(np.shape(phases) + (dim,))


@dataclass
class ForwardCache:
    """Activations kept by a caching forward pass for the backward pass."""

    inputs: np.ndarray  # (B*T, D_in)
    hiddens: list  # num_layers arrays of (B*T, H), post-tanh
    token_rows: np.ndarray  # (B*T,) embedding row per frame, -1 for null
    batch_shape: tuple  # (B, C, T)


def _window_features(x: np.ndarray, window: int) -> np.ndarray:
    """(B, C, T) -> (B, T, C*W) zero-padded sliding windows along frames."""
    B, C, T = x.shape
    w2 = window // 2
    padded = np.zeros((B, C, T + 2 * w2), dtype=x.dtype)
    padded[:, :, w2 : w2 + T] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, window, axis=2)  # (B, C, T, W)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, T, C * window)


def _condition_rows(params: VectorFieldParams, conds, B: int, T: int):
    """Embedding row per (item, frame) plus intra-token phases.

    Row -1 selects the null embedding. Phases follow each item's own
    alignment, so items with different token counts coexist in a batch.
    """
    cfg = params.config
    rows = np.full((B, T), -1, dtype=np.int64)
    phases = np.empty((B, T), dtype=np.float64)
    phase_cache: dict = {}
    for b, cond in enumerate(conds):
        length = None
        if cond is not None:
            ids = np.asarray(cond, dtype=np.int64)
            if ids.size == 0:
                raise VocabError("empty token sequence; pass None for the unconditional branch")
            if ids.min() < 0 or ids.max() >= cfg.vocab_size:
                raise VocabError(f"token ids must lie in [0, {cfg.vocab_size})")
            rows[b] = ids[align_tokens_to_frames(ids.size, T)]
            length = int(ids.size)
        if length not in phase_cache:
            phase_cache[length] = token_phase(length, T)
        phases[b] = phase_cache[length]
    return rows.reshape(B * T), phases


def forward_batch(
    params: VectorFieldParams,
    x_t: np.ndarray,
    t,
    conds,
    want_cache: bool = False,
):
    """Batched vector-field evaluation.

    Args:
        x_t: (B, C, T) noisy latents.
        t: scalar or length-B vector of times.
        conds: length-B list of token-id sequences; None entries use the
            learned null embedding (unconditional branch).
        want_cache: keep activations for a subsequent backward pass.

    Returns:
        (B, C, T) velocity predictions, and the cache (or None).
    """
    dtype = params.dtype
    x_t = np.asarray(x_t, dtype=dtype)
    B, C, T = x_t.shape
    cfg = params.config

    win = _window_features(x_t, cfg.context_window)  # (B, T, C*W)
    t_emb = time_embedding(t if np.ndim(t) else np.full(B, t), cfg.time_embed_dim, dtype)
    t_full = np.broadcast_to(t_emb[:, None, :], (B, T, cfg.time_embed_dim))

    rows, phases = _condition_rows(params, conds, B, T)
    p_full = position_embedding(phases, cfg.pos_embed_dim, dtype)  # (B, T, P)
    emb_table = np.concatenate([params.token_embedding, params.null_embedding[None, :]], axis=0)
    cond_emb = emb_table[rows].reshape(B, T, cfg.embed_dim)  # row -1 is the null entry

    z = np.concatenate([win, t_full, p_full, cond_emb], axis=2).reshape(B * T, cfg.input_dim)

    hiddens = []
    h = z
    for w, b in zip(params.layer_weights, params.layer_biases):
        h = np.tanh(h @ w + b)
        hiddens.append(h)
    u = (h @ params.output_weight + params.output_bias).reshape(B, T, C).transpose(0, 2, 1)

    cache = ForwardCache(z, hiddens, rows, (B, C, T)) if want_cache else None
    return np.ascontiguousarray(u), cache


def forward(
    params: VectorFieldParams, x_t: LatentSequence, t: float, cond=None
) -> LatentSequence:
    """Single-sequence convenience wrapper around forward_batch."""
    u, _ = forward_batch(params, x_t.data[None], float(t), [cond])
    return LatentSequence(u[0].astype(np.float32), x_t.frame_rate)


def backward(params: VectorFieldParams, cache: ForwardCache, dL_du: np.ndarray) -> dict:
    """Exact parameter gradients for a scalar loss with output-gradient dL_du.

    Args:
        cache: activations from forward_batch(..., want_cache=True).
        dL_du: (B, C, T) gradient of the loss w.r.t. the prediction.

    Returns:
        dict mapping parameter names (see named_arrays) to gradient arrays.
    """
    if cache is None:
        raise ValueError("backward requires the cache from forward_batch(want_cache=True)")
    cfg = params.config
    B, C, T = cache.batch_shape
    dtype = params.dtype
    g_out = np.asarray(dL_du, dtype=dtype).transpose(0, 2, 1).reshape(B * T, C)

    grads: dict[str, np.ndarray] = {}
    h_last = cache.hiddens[-1]
    grads["output_weight"] = h_last.T @ g_out
    grads["output_bias"] = g_out.sum(axis=0)

    delta = g_out @ params.output_weight.T
    for i in range(cfg.num_layers - 1, -1, -1):
        h = cache.hiddens[i]
        delta = delta * (1.0 - h * h)  # through tanh
        below = cache.hiddens[i - 1] if i > 0 else cache.inputs
        grads[f"layer{i}_weight"] = below.T @ delta
        grads[f"layer{i}_bias"] = delta.sum(axis=0)
        delta = delta @ params.layer_weights[i].T

    # condition-embedding slice of the input gradient, scattered back to rows
    emb_start = cfg.channels * cfg.context_window + cfg.time_embed_dim + cfg.pos_embed_dim
    d_emb = delta[:, emb_start : emb_start + cfg.embed_dim]
    g_tok = np.zeros_like(params.token_embedding)
    g_null = np.zeros_like(params.null_embedding)
    rows = cache.token_rows
    null_mask = rows < 0
    if null_mask.any():
        g_null += d_emb[null_mask].sum(axis=0)
    if (~null_mask).any():
        np.add.at(g_tok, rows[~null_mask], d_emb[~null_mask])
    grads["token_embedding"] = g_tok
    grads["null_embedding"] = g_null
    return grads


def maybe_drop_condition(cond, rng: SeededRng, uncond_prob: float):
    """Replace the condition with None at the configured dropout rate."""
    if uncond_prob > 0 and rng.random() < uncond_prob:
        return None
    return cond


# -- optimizer -----------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators (zero weight decay)."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: VectorFieldParams, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999) -> AdamState:
    m = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    v = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    return AdamState(m=m, v=v, step=0, lr=lr, beta1=beta1, beta2=beta2)


def adam_step(
    params: VectorFieldParams, grads: dict, state: AdamState, lr: float | None = None
) -> tuple[VectorFieldParams, AdamState]:
    """One in-place Adam update; pass ``lr`` to override the state's base rate."""
    if lr is None:
        lr = state.lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, arr in params.named_arrays():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {arr.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return params, state
