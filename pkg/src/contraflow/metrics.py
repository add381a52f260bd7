"""Character and word error rates, plus checkpoint evaluation reports.

Error rates follow the usual ASR convention: normalize both strings
(punctuation removal, whitespace collapse, lowercasing), align with
unit-cost Levenshtein distance, and report 100 * (S + I + D) / ref_len.
Aggregation is micro-averaged: edit counts and reference lengths are
pooled before dividing, so long utterances carry proportional weight.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedRateError
from .rng import SeededRng
from .sampler import SamplerConfig, euler_solve_batch
from .toyspeech import Codebook, oracle_decode, render_text

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(s: str) -> str:
    """Strip punctuation, collapse whitespace runs, trim, lowercase."""
    return " ".join(s.translate(_PUNCT_TABLE).split()).lower()


def edit_distance(a, b) -> tuple[int, int, int, int]:
    """Levenshtein distance from ref ``a`` to hyp ``b`` with S/I/D counts.

    Ties during traceback prefer substitution, then insertion, then
    deletion; preference only affects the decomposition, never the
    distance. Symbols may be characters, words, or any hashables.

    Returns:
        (distance, substitutions, insertions, deletions).
    """
    a = list(a)
    b = list(b)
    n, m = len(a), len(b)
    if a == b:
        return 0, 0, 0, 0

    codes = {}
    for sym in a:
        codes.setdefault(sym, len(codes))
    for sym in b:
        codes.setdefault(sym, len(codes))
    a_arr = np.asarray([codes[s] for s in a], dtype=np.int32)
    b_arr = np.asarray([codes[s] for s in b], dtype=np.int32)

    D = np.zeros((n + 1, m + 1), dtype=np.int32)
    D[0, :] = np.arange(m + 1)
    D[:, 0] = np.arange(n + 1)
    j_idx = np.arange(m + 1, dtype=np.int32)
    for i in range(1, n + 1):
        sub = D[i - 1, :-1] + (a_arr[i - 1] != b_arr)
        dele = D[i - 1, 1:] + 1
        # resolve the left-to-right insertion dependency in one scan:
        # row[j] = j + min_{k<=j} (cand[k] - k)
        cand = np.empty(m + 1, dtype=np.int32)
        cand[0] = i
        np.minimum(sub, dele, out=cand[1:])
        D[i] = j_idx + np.minimum.accumulate(cand - j_idx)

    S = I = Dl = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = D[i, j]
        if i > 0 and j > 0 and here == D[i - 1, j - 1] + (a_arr[i - 1] != b_arr[j - 1]):
            S += int(a_arr[i - 1] != b_arr[j - 1])
            i -= 1
            j -= 1
        elif j > 0 and here == D[i, j - 1] + 1:
            I += 1
            j -= 1
        else:
            Dl += 1
            i -= 1
    return int(D[n, m]), S, I, Dl


@dataclass
class ErrorRateReport:
    """Both granularities of one ref/hyp comparison (or a pooled set).

    The unqualified substitutions/insertions/deletions/ref_len properties
    are the character-level counts; those are what the CSV columns carry.
    """

    cer: float
    wer: float
    char_subs: int
    char_ins: int
    char_dels: int
    char_ref_len: int
    char_hyp_len: int
    word_subs: int
    word_ins: int
    word_dels: int
    word_ref_len: int
    word_hyp_len: int

    @property
    def substitutions(self) -> int:
        return self.char_subs

    @property
    def insertions(self) -> int:
        return self.char_ins

    @property
    def deletions(self) -> int:
        return self.char_dels

    @property
    def ref_len(self) -> int:
        return self.char_ref_len

    @property
    def hyp_len(self) -> int:
        return self.char_hyp_len


def _report_from_counts(cc: tuple, wc: tuple) -> ErrorRateReport:
    cs, ci, cd, crl, chl = cc
    ws, wi, wd, wrl, whl = wc
    if crl == 0 or wrl == 0:
        raise UndefinedRateError("error rate undefined for an empty normalized reference")
    return ErrorRateReport(
        cer=100.0 * (cs + ci + cd) / crl,
        wer=100.0 * (ws + wi + wd) / wrl,
        char_subs=cs,
        char_ins=ci,
        char_dels=cd,
        char_ref_len=crl,
        char_hyp_len=chl,
        word_subs=ws,
        word_ins=wi,
        word_dels=wd,
        word_ref_len=wrl,
        word_hyp_len=whl,
    )


def error_rates(ref: str, hyp: str) -> ErrorRateReport:
    """CER and WER of one hypothesis against one reference."""
    ref_n = normalize_text(ref)
    hyp_n = normalize_text(hyp)
    if not ref_n:
        raise UndefinedRateError("error rate undefined for an empty normalized reference")
    _, cs, ci, cd = edit_distance(ref_n, hyp_n)
    ref_w = ref_n.split()
    hyp_w = hyp_n.split()
    _, ws, wi, wd = edit_distance(ref_w, hyp_w)
    return _report_from_counts(
        (cs, ci, cd, len(ref_n), len(hyp_n)), (ws, wi, wd, len(ref_w), len(hyp_w))
    )


def cer(ref: str, hyp: str) -> ErrorRateReport:
    return error_rates(ref, hyp)


def wer(ref: str, hyp: str) -> ErrorRateReport:
    return error_rates(ref, hyp)


def pool_reports(reports: list) -> ErrorRateReport:
    """Micro-average: sum counts first, divide once."""
    if not reports:
        raise UndefinedRateError("cannot pool an empty report list")
    cc = tuple(
        sum(getattr(r, f) for r in reports)
        for f in ("char_subs", "char_ins", "char_dels", "char_ref_len", "char_hyp_len")
    )
    wc = tuple(
        sum(getattr(r, f) for r in reports)
        for f in ("word_subs", "word_ins", "word_dels", "word_ref_len", "word_hyp_len")
    )
    return _report_from_counts(cc, wc)


# -- checkpoint evaluation ----------------------------------------------


@dataclass
class EvalRow:
    seed: int
    index: int
    ref_text: str
    hyp_text: str
    report: ErrorRateReport


@dataclass
class EvalReport:
    rows: list
    per_seed: dict
    overall: ErrorRateReport
    worst: list = field(default_factory=list)


def evaluate_checkpoint(
    checkpoint,
    eval_set: list,
    codebook: Codebook,
    sampler_cfg: SamplerConfig,
    seeds: list,
    synth_fn=None,
    worst_k: int = 5,
) -> EvalReport:
    """Synthesize every eval utterance once per seed and score it.

    Args:
        checkpoint: object exposing ``params`` (ignored when synth_fn is
            given).
        eval_set: ToyUtterance list; all items must share a frame count.
        codebook: decoder for the synthesized latents.
        sampler_cfg: NFE and guidance weight; its seed field is unused
            here (the explicit ``seeds`` list drives the noise).
        seeds: one synthesis pass per entry, per utterance.
        synth_fn: test hook ``(conds, shape, rngs) -> list of latents``
            replacing the Euler sampler.

    Utterance i under seed s draws noise from
    ``SeededRng(s).substream(("synth", i))``, so adding or dropping
    utterances never perturbs the others.
    """
    if not eval_set:
        raise UndefinedRateError("empty eval set")
    shape = eval_set[0].latent.data.shape
    frame_rate = eval_set[0].latent.frame_rate
    conds = [utt.tokens for utt in eval_set]

    if synth_fn is None:

        def synth_fn(conds_, shape_, rngs_):
            return euler_solve_batch(
                checkpoint.params, shape_, conds_, sampler_cfg, rngs_, frame_rate
            )

    rows = []
    for s in seeds:
        base = SeededRng(s)
        rngs = [base.substream(("synth", i)) for i in range(len(eval_set))]
        latents = synth_fn(conds, shape, rngs)
        for i, (utt, latent) in enumerate(zip(eval_set, latents)):
            hyp = render_text(oracle_decode(latent, codebook))
            rows.append(
                EvalRow(
                    seed=s,
                    index=i,
                    ref_text=utt.text,
                    hyp_text=hyp,
                    report=error_rates(utt.text, hyp),
                )
            )

    per_seed = {
        s: pool_reports([r.report for r in rows if r.seed == s]) for s in seeds
    }
    overall = pool_reports([r.report for r in rows])
    worst = sorted(rows, key=lambda r: (-r.report.cer, r.seed, r.index))[:worst_k]
    return EvalReport(rows=rows, per_seed=per_seed, overall=overall, worst=worst)


# -- CSV emission --------------------------------------------------------

METRICS_HEADER = "step,variant,nfe,seed,cer_pct,wer_pct,subs,ins,dels,ref_len"
SUMMARY_HEADER = "step,variant,nfe,cer_pct,wer_pct,subs,ins,dels,ref_len"


def metrics_row(step: int, variant: str, nfe: int, seed: int, r: ErrorRateReport) -> str:
    return (
        f"{step},{variant},{nfe},{seed},{r.cer:.6f},{r.wer:.6f},"
        f"{r.substitutions},{r.insertions},{r.deletions},{r.ref_len}"
    )


def summary_row(step: int, variant: str, nfe: int, r: ErrorRateReport) -> str:
    return (
        f"{step},{variant},{nfe},{r.cer:.6f},{r.wer:.6f},"
        f"{r.substitutions},{r.insertions},{r.deletions},{r.ref_len}"
    )
