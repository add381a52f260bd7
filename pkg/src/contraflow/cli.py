"""Command-line surface: train, eval, synth, augment, gradcheck, report.

Exit codes: 0 success, 2 configuration error (also argparse usage
errors), 3 numeric divergence during training, 4 file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


def _int_list(s: str) -> list:
    try:
        return [int(p) for p in s.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contraflow",
        description="Contrastive flow matching on a synthetic text-to-latent task.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run one training configuration")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None, help="override the config output directory")

    p = sub.add_parser("eval", parents=[common], help="score a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--eval-set", required=True, help="TSV of token ids and latent hex")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nfe", type=_int_list, default=[12, 24])
    p.add_argument("--seeds", type=_int_list, default=[1, 2])
    p.add_argument("--cfg-weight", type=float, default=3.0)
    p.add_argument("--variant", default="unknown", help="label written to the CSV rows")

    p = sub.add_parser("synth", parents=[common], help="synthesize one utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook", required=True, help="defines frames per token and the vocab")
    p.add_argument("--text", required=True, help="space-separated token names")
    p.add_argument("--nfe", type=int, default=24)
    p.add_argument("--cfg-weight", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output latent file")
    p.add_argument("--decode", action="store_true", help="also print the decoded text")

    p = sub.add_parser("augment", parents=[common], help="corrupt a latent file")
    p.add_argument("input", help="input latent file")
    p.add_argument("--out", required=True, help="corrupted latent file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["auto", "repeat", "skip"], default="auto")
    p.add_argument("--budget", type=float, default=None, help="override the sampled budget")

    p = sub.add_parser("gradcheck", parents=[common], help="verify gradients numerically")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)

    p = sub.add_parser("report", parents=[common], help="merge summary CSVs into curve tables")
    p.add_argument("summaries", nargs="+", help="summary.csv files from training runs")
    p.add_argument("--out", default=None, help="write the table here instead of stdout")
    return parser


def cmd_train(args) -> int:
    from .config import parse_config
    from .training import run_train

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    cfg = parse_config(args.config, overrides)
    result = run_train(cfg)
    print(f"trained {cfg.variant} for {cfg.total_steps} steps -> {result.out_dir}")
    for step, nfe, cer_pct, wer_pct in result.eval_history[-len(cfg.eval_nfe) :]:
        print(f"  step {step} nfe {nfe}: cer {cer_pct:.3f}% wer {wer_pct:.3f}%")
    return 0


def cmd_eval(args) -> int:
    from .training import run_eval

    reports = run_eval(
        args.checkpoint,
        args.codebook,
        args.eval_set,
        args.out_dir,
        args.nfe,
        args.seeds,
        cfg_weight=args.cfg_weight,
        variant=args.variant,
    )
    for nfe, report in reports:
        print(f"nfe {nfe}: cer {report.overall.cer:.4f}% wer {report.overall.wer:.4f}%")
    return 0


def cmd_synth(args) -> int:
    from .checkpoint import load_checkpoint
    from .latent import write_ltnt
    from .rng import SeededRng
    from .sampler import SamplerConfig, euler_solve, vector_field
    from .toyspeech import oracle_decode, read_codebook, render_text, tokens_from_text

    ckpt = load_checkpoint(args.checkpoint)
    codebook = read_codebook(args.codebook)
    tokens = tokens_from_text(args.text, codebook.vocab_size)
    frames = len(tokens) * codebook.frames_per_token
    sc = SamplerConfig(nfe=args.nfe, cfg_weight=args.cfg_weight, seed=args.seed)
    rng = SeededRng(args.seed).substream("synth")
    latent = euler_solve(
        vector_field(ckpt.params),
        (codebook.channels, frames),
        tokens,
        sc,
        rng,
        codebook.frame_rate,
    )
    write_ltnt(args.out, latent)
    print(f"wrote {latent.channels}x{latent.frames} latent to {args.out}")
    if args.decode:
        print(f"decoded: {render_text(oracle_decode(latent, codebook))}")
    return 0


def cmd_augment(args) -> int:
    from .augment import AugmentConfig, AugmentMode, augment
    from .latent import read_ltnt, write_ltnt, zeros_like
    from .rng import SeededRng

    x = read_ltnt(args.input)
    mode = {"auto": None, "repeat": AugmentMode.REPEAT, "skip": AugmentMode.SKIP}[args.mode]
    cfg = AugmentConfig(frame_rate=x.frame_rate)
    rng = SeededRng(args.seed).substream("augment-cli")
    outcome = augment(x, zeros_like(x), rng, cfg, mode=mode, budget=args.budget)
    write_ltnt(args.out, outcome.latent)
    print(f"mode: {outcome.mode.name.lower()}")
    print(f"budget: {outcome.budget:.6f}")
    print(f"realized_coverage: {outcome.realized_coverage:.6f}")
    for edit in outcome.edits:
        if outcome.mode is AugmentMode.REPEAT:
            s, k, length = edit
            print(f"edit: repeat source={s} target={k} length={length}")
        else:
            s1, length = edit
            print(f"edit: skip start={s1} length={length}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(seed=args.seed, probes=args.probes)
    for line in report.summary_lines():
        print(line)
    return 0 if report.passed else 1


def cmd_report(args) -> int:
    from .errors import FileFormatError

    rows = []
    for path in args.summaries:
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith("step,variant,nfe"):
            raise FileFormatError(f"{path}: not a summary CSV (bad header)")
        for line in text[1:]:
            if not line.strip():
                continue
            parts = line.split(",")
            rows.append((int(parts[0]), parts[1], int(parts[2]), float(parts[3]), float(parts[4])))

    variants = sorted({r[1] for r in rows})
    lines = ["nfe,step," + ",".join(f"cer_{v}" for v in variants)]
    for nfe in sorted({r[2] for r in rows}):
        for step in sorted({r[0] for r in rows if r[2] == nfe}):
            cells = [str(nfe), str(step)]
            for v in variants:
                match = [r[3] for r in rows if r[0] == step and r[1] == v and r[2] == nfe]
                cells.append(f"{match[0]:.6f}" if match else "")
            lines.append(",".join(cells))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(table)
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "augment": cmd_augment,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    from threadpoolctl import threadpool_limits

    from .errors import ConfigError, DivergenceError, FileFormatError

    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except FileFormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
