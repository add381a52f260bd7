"""Finite-difference verification of the hand-derived gradients.

The full training objective (positive plus both subtracted negatives) is
probed at randomly-chosen parameter coordinates: each probe perturbs one
coordinate of a float64 shadow copy of the parameters by +-h and compares
the central difference of the total loss against the analytic gradient.
All randomness inside the objective replays identically between calls
because the step stream is a pure key, so the loss is a deterministic
smooth function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig
from .errors import ConfigError
from .flowmatch import LossWeights, training_step
from .latent import LatentSequence
from .rng import SeededRng
from .vectorfield import ModelConfig, init_params

MAX_PARAMS = 500
STEP_H = 1e-3
REL_TOL = 1e-4
PROBES = 20


def tiny_config() -> ModelConfig:
    """A deliberately small model so finite differences stay cheap."""
    return ModelConfig(
        vocab_size=4,
        channels=2,
        embed_dim=3,
        hidden_dim=6,
        num_layers=2,
        context_window=3,
        time_embed_dim=4,
        pos_embed_dim=4,
        uncond_prob=0.5,
    )


@dataclass
class ProbeResult:
    weights_label: str
    array_name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    probes: list = field(default_factory=list)
    worst: ProbeResult | None = None

    def summary_lines(self) -> list:
        by_array: dict[str, float] = {}
        for p in self.probes:
            by_array[p.array_name] = max(by_array.get(p.array_name, 0.0), p.rel_err)
        lines = [
            f"{'PASS' if self.passed else 'FAIL'}: max relative error "
            f"{self.max_rel_err:.3e} over {len(self.probes)} probes (tolerance {REL_TOL:.0e})"
        ]
        for name in sorted(by_array):
            lines.append(f"  {name}: worst {by_array[name]:.3e}")
        if self.worst is not None and not self.passed:
            w = self.worst
            lines.append(
                f"  worst probe: {w.array_name}[{w.flat_index}] under {w.weights_label} "
                f"(analytic {w.analytic:.6e}, numeric {w.numeric:.6e})"
            )
        return lines


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def run_gradcheck(
    cfg: ModelConfig | None = None,
    seed: int = 0,
    probes: int = PROBES,
    h: float = STEP_H,
    corrupt_hook=None,
) -> GradCheckReport:
    """Probe analytic gradients of the full objective at random coordinates.

    Args:
        cfg: model sizes; must stay at or below MAX_PARAMS parameters.
        seed: drives the batch, the shadow init and probe selection.
        corrupt_hook: test-only fault injector, called as
            ``hook(grads dict) -> grads dict`` after the analytic pass.

    Both the full weighting (0.2, 0.2) and the plain-flow weighting
    (0, 0) are probed; the report pools all probes.
    """
    if cfg is None:
        cfg = tiny_config()
    n_params = cfg.param_count()
    if n_params > MAX_PARAMS:
        raise ConfigError(
            f"gradcheck model has {n_params} parameters; limit is {MAX_PARAMS} "
            "(finite differences would be too slow/imprecise)"
        )

    root = SeededRng(seed)
    data_rng = root.substream("gradcheck-data")
    B, T = 2, 8
    batch = []
    for i in range(B):
        x = LatentSequence(data_rng.normal((cfg.channels, T)))
        n_tok = 3
        cond = np.asarray([data_rng.integers(0, cfg.vocab_size - 1) for _ in range(n_tok)])
        batch.append((x, cond))
    x_sil = LatentSequence(np.zeros((cfg.channels, T), dtype=np.float32))
    aug_cfg = AugmentConfig(frame_rate=20.0)

    params = init_params(cfg, root.substream("gradcheck-init")).astype(np.float64)
    step_rng = root.substream("gradcheck-step")
    probe_rng = root.substream("gradcheck-probes")

    names = [name for name, _ in params.named_arrays()]
    sizes = np.array([arr.size for _, arr in params.named_arrays()], dtype=np.float64)
    cum = np.cumsum(sizes / sizes.sum())

    def loss_at(p) -> float:
        breakdown, _ = training_step(batch, p, x_sil, weights, step_rng, aug_cfg)
        return breakdown.total

    report = GradCheckReport(passed=True, max_rel_err=0.0)
    for label, weights in (
        ("lambda=(0.2,0.2)", LossWeights(0.2, 0.2)),
        ("lambda=(0,0)", LossWeights(0.0, 0.0)),
    ):
        _, grads = training_step(batch, params, x_sil, weights, step_rng, aug_cfg)
        if corrupt_hook is not None:
            grads = corrupt_hook(dict(grads))
        for _ in range(probes):
            u = probe_rng.random()
            a_idx = int(np.searchsorted(cum, u, side="right"))
            a_idx = min(a_idx, len(names) - 1)
            name = names[a_idx]
            arr = dict(params.named_arrays())[name]
            flat = probe_rng.integers(0, arr.size - 1)

            plus = params.copy()
            dict(plus.named_arrays())[name].flat[flat] += h
            minus = params.copy()
            dict(minus.named_arrays())[name].flat[flat] -= h
            numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h)
            analytic = float(grads[name].flat[flat])
            err = _rel_err(analytic, numeric)
            probe = ProbeResult(label, name, int(flat), analytic, numeric, err)
            report.probes.append(probe)
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = probe
    report.passed = report.max_rel_err < REL_TOL
    return report
