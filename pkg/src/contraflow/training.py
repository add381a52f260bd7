"""Training-run orchestration: data generation, the step loop, evaluation.

Every random draw in a run descends from one root stream keyed by the
config seed, through named substreams:

    "codebook"            codebook pattern sampling
    "dataset"             train/eval utterance sampling
    "init"                parameter initialization
    ("batch", s)          batch indices for step s (inclusive integers)
    ("step", s)           everything inside training_step at step s
                          (per-item ("flow", i), ("aug", i), ("drop", i))

Evaluation noise instead comes from SeededRng(eval_seed), independent of
the run seed, so every variant and checkpoint is scored against the same
noise draws. This layout makes a run bitwise reproducible and lets an
independent reimplementation replay any piece in isolation.

Artifacts written to out_dir:

    resolved_config.txt   echo of the effective configuration
    codebook.cbok         the token codebook
    eval_set.tsv          held-out utterances (train set is regenerable)
    losses.csv            per-step loss breakdown, flushed per row
    metrics.csv           per-(step, nfe, eval-seed) pooled error rates
    summary.csv           per-(step, nfe) pooled error rates
    ckpt_<step>.rsfl      checkpoint at each evaluation point
    final.rsfl            checkpoint after the last step
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig, write_resolved_config
from .errors import DivergenceError
from .flowmatch import LossBreakdown, training_step
from .metrics import (
    METRICS_HEADER,
    SUMMARY_HEADER,
    EvalReport,
    evaluate_checkpoint,
    metrics_row,
    summary_row,
)
from .rng import SeededRng
from .sampler import SamplerConfig
from .toyspeech import gen_dataset, make_codebook, save_utterances, silence_latent, write_codebook
from .vectorfield import adam_step, init_adam, init_params

logger = logging.getLogger(__name__)

LOSSES_HEADER = "step,pos,rand,aug,total,lr"


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    out_dir: Path
    codebook: object
    eval_set: list
    eval_history: list = field(default_factory=list)  # (step, nfe, pooled cer, pooled wer)
    final_loss: LossBreakdown | None = None


def eval_steps(total_steps: int, eval_every: int) -> list:
    """Multiples of eval_every in [1, total], plus the final step."""
    steps = list(range(eval_every, total_steps + 1, eval_every))
    if total_steps > 0 and (not steps or steps[-1] != total_steps):
        steps.append(total_steps)
    return steps


def lr_at_step(base_lr: float, step: int, halve_every: int) -> float:
    """Step-s learning rate under optional halving every halve_every steps."""
    if halve_every <= 0:
        return base_lr
    return base_lr * 0.5 ** ((step - 1) // halve_every)


def _loss_row(step: int, b: LossBreakdown, lr: float) -> str:
    return f"{step},{b.pos:.6f},{b.rand:.6f},{b.aug:.6f},{b.total:.6f},{lr:.8f}"


def run_train(cfg: RunConfig) -> TrainResult:
    """Execute one full training run as described by the config."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    root = SeededRng(cfg.seed)
    codebook = make_codebook(
        root.substream("codebook"),
        vocab_size=cfg.vocab_size,
        channels=cfg.channels,
        frames_per_token=cfg.frames_per_token,
        min_dist=cfg.codebook_min_dist,
        frame_rate=cfg.frame_rate,
    )
    write_codebook(out_dir / "codebook.cbok", codebook)

    train_set, eval_set = gen_dataset(cfg.dataset_config, codebook, root.substream("dataset"))
    save_utterances(out_dir / "eval_set.tsv", eval_set)
    frames = train_set[0].latent.frames
    x_sil = silence_latent(codebook, frames)

    params = init_params(cfg.model_config, root.substream("init"))
    adam = init_adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    weights = cfg.weights
    aug_cfg = cfg.augment_config

    losses_path = out_dir / "losses.csv"
    metrics_path = out_dir / "metrics.csv"
    summary_path = out_dir / "summary.csv"
    result = TrainResult(
        checkpoint=Checkpoint(params, adam, 0),
        out_dir=out_dir,
        codebook=codebook,
        eval_set=eval_set,
    )

    points = set(eval_steps(cfg.total_steps, cfg.eval_every))
    with (
        open(losses_path, "w", encoding="utf-8") as losses_fh,
        open(metrics_path, "w", encoding="utf-8") as metrics_fh,
        open(summary_path, "w", encoding="utf-8") as summary_fh,
    ):
        losses_fh.write(LOSSES_HEADER + "\n")
        metrics_fh.write(METRICS_HEADER + "\n")
        summary_fh.write(SUMMARY_HEADER + "\n")
        for fh in (losses_fh, metrics_fh, summary_fh):
            fh.flush()

        if cfg.total_steps == 0:
            save_checkpoint(out_dir / "final.rsfl", result.checkpoint)
            return result

        n_train = len(train_set)
        breakdown = None
        for step in range(1, cfg.total_steps + 1):
            batch_rng = root.substream(("batch", step))
            batch = []
            for _ in range(cfg.batch_size):
                utt = train_set[batch_rng.integers(0, n_train - 1)]
                batch.append((utt.latent, utt.tokens))

            step_rng = root.substream(("step", step))
            breakdown, grads = training_step(batch, params, x_sil, weights, step_rng, aug_cfg)
            lr = lr_at_step(cfg.lr, step, cfg.halve_lr_every)
            losses_fh.write(_loss_row(step, breakdown, lr) + "\n")
            losses_fh.flush()
            if not math.isfinite(breakdown.total) or not math.isfinite(breakdown.pos):
                raise DivergenceError(
                    f"non-finite loss at step {step}: pos={breakdown.pos} "
                    f"rand={breakdown.rand} aug={breakdown.aug} total={breakdown.total}"
                )
            adam_step(params, grads, adam, lr=lr)

            if step in points:
                ckpt = Checkpoint(params, adam, step)
                save_checkpoint(out_dir / f"ckpt_{step:06d}.rsfl", ckpt)
                for nfe in cfg.eval_nfe:
                    sc = SamplerConfig(nfe=nfe, cfg_weight=cfg.cfg_weight)
                    report = evaluate_checkpoint(
                        ckpt, eval_set, codebook, sc, list(cfg.eval_seeds)
                    )
                    _append_eval(
                        metrics_fh, summary_fh, step, cfg.variant, nfe, report
                    )
                    result.eval_history.append(
                        (step, nfe, report.overall.cer, report.overall.wer)
                    )
                    logger.info(
                        "step %d nfe %d: cer %.3f%% wer %.3f%%",
                        step,
                        nfe,
                        report.overall.cer,
                        report.overall.wer,
                    )

        result.checkpoint = Checkpoint(params, adam, cfg.total_steps)
        result.final_loss = breakdown
        save_checkpoint(out_dir / "final.rsfl", result.checkpoint)
    return result


def _append_eval(metrics_fh, summary_fh, step: int, variant: str, nfe: int, report: EvalReport):
    for seed in sorted(report.per_seed):
        metrics_fh.write(metrics_row(step, variant, nfe, seed, report.per_seed[seed]) + "\n")
    metrics_fh.flush()
    summary_fh.write(summary_row(step, variant, nfe, report.overall) + "\n")
    summary_fh.flush()


def run_eval(
    checkpoint_path,
    codebook_path,
    eval_set_path,
    out_dir,
    nfe_list,
    seeds,
    cfg_weight: float = 3.0,
    variant: str = "unknown",
) -> list:
    """Score a saved checkpoint; all inputs are validated before any write."""
    from .checkpoint import load_checkpoint
    from .toyspeech import load_utterances, read_codebook

    ckpt = load_checkpoint(checkpoint_path)
    codebook = read_codebook(codebook_path)
    eval_set = load_utterances(eval_set_path)

    reports = []
    for nfe in nfe_list:
        sc = SamplerConfig(nfe=nfe, cfg_weight=cfg_weight)
        reports.append((nfe, evaluate_checkpoint(ckpt, eval_set, codebook, sc, list(seeds))))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    summary_path = out / "summary.csv"
    with (
        open(metrics_path, "w", encoding="utf-8") as metrics_fh,
        open(summary_path, "w", encoding="utf-8") as summary_fh,
    ):
        metrics_fh.write(METRICS_HEADER + "\n")
        summary_fh.write(SUMMARY_HEADER + "\n")
        for nfe, report in reports:
            _append_eval(metrics_fh, summary_fh, ckpt.train_step, variant, nfe, report)

    report_path = out / "eval_report.txt"
    lines = []
    for nfe, report in reports:
        lines.append(f"nfe {nfe}: cer {report.overall.cer:.4f}% wer {report.overall.wer:.4f}%")
        for seed in sorted(report.per_seed):
            r = report.per_seed[seed]
            lines.append(f"  seed {seed}: cer {r.cer:.4f}% wer {r.wer:.4f}%")
        lines.append("  worst utterances:")
        for row in report.worst:
            lines.append(
                f"    seed {row.seed} idx {row.index} cer {row.report.cer:.2f}%: "
                f"ref {row.ref_text!r} hyp {row.hyp_text!r}"
            )
    report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return reports
