"""Scikit-learn style wrappers around the training and corruption pipeline.

Three estimators cover the package's surface:

* FlowSynthesizer — fit() trains the conditional field on the toy task,
  predict() synthesizes latents for token sequences and decodes them
  back to text, score() returns the negative character error rate.
* LatentCorruptor — a stateless transformer applying the repeat/skip
  corruptions; transform() is deterministic given the seed.
* CodebookCodec — transform() encodes token sequences to latents,
  inverse_transform() decodes latents back to token sequences.

All constructor arguments follow the scikit-learn convention: stored
verbatim, validated at fit time, discoverable via get_params().
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentConfig, AugmentMode, augment
from .config import parse_config_text
from .latent import LatentSequence
from .metrics import error_rates, pool_reports
from .rng import SeededRng
from .sampler import SamplerConfig, euler_solve_batch
from .toyspeech import (
    encode,
    make_codebook,
    oracle_decode,
    render_text,
    silence_latent,
    tokens_from_text,
)
from .training import run_train


class FlowSynthesizer(BaseEstimator):
    """Text-to-latent synthesizer trained with contrastive flow matching.

    Parameters mirror the run-config keys; fit() drives the same training
    loop as the command line and keeps its artifacts in ``out_dir`` (a
    temporary directory when unset).
    """

    def __init__(
        self,
        variant: str = "robust",
        total_steps: int = 2000,
        batch_size: int = 16,
        seed: int = 0,
        lr: float = 5e-4,
        train_size: int = 500,
        eval_size: int = 50,
        eval_every: int | None = None,
        nfe: int = 24,
        cfg_weight: float = 3.0,
        out_dir: str | None = None,
    ):
        self.variant = variant
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.seed = seed
        self.lr = lr
        self.train_size = train_size
        self.eval_size = eval_size
        self.eval_every = eval_every
        self.nfe = nfe
        self.cfg_weight = cfg_weight
        self.out_dir = out_dir

    def _config_text(self, out_dir: str) -> str:
        eval_every = self.eval_every
        if eval_every is None:
            eval_every = max(1, self.total_steps)
        lines = [
            f"variant = {self.variant}",
            f"total_steps = {self.total_steps}",
            f"batch_size = {self.batch_size}",
            f"seed = {self.seed}",
            f"lr = {self.lr!r}",
            f"train_size = {self.train_size}",
            f"eval_size = {self.eval_size}",
            f"eval_every = {eval_every}",
            f"eval_nfe = {self.nfe}",
            f"cfg_weight = {self.cfg_weight!r}",
            f"out_dir = {out_dir}",
        ]
        return "\n".join(lines) + "\n"

    def fit(self, X=None, y=None):
        """Train on the self-generated toy dataset (X and y are ignored)."""
        if self.out_dir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="contraflow-fit-")
            out_dir = self._tmpdir.name
        else:
            out_dir = self.out_dir
            Path(out_dir).mkdir(parents=True, exist_ok=True)
        cfg = parse_config_text(self._config_text(out_dir))
        result = run_train(cfg)
        self.run_config_ = cfg
        self.checkpoint_ = result.checkpoint
        self.codebook_ = result.codebook
        self.eval_set_ = result.eval_set
        self.eval_history_ = result.eval_history
        self.frames_per_token_ = result.codebook.frames_per_token
        return self

    def _conds(self, X) -> list:
        conds = []
        for item in X:
            if isinstance(item, str):
                conds.append(tokens_from_text(item, self.codebook_.vocab_size))
            else:
                conds.append(np.asarray(item, dtype=np.int64))
        return conds

    def synthesize(self, X, seed: int = 0) -> list:
        """Latents for token sequences (or token-name strings) in X."""
        check_is_fitted(self, "checkpoint_")
        conds = self._conds(X)
        sc = SamplerConfig(nfe=self.nfe, cfg_weight=self.cfg_weight)
        base = SeededRng(seed)
        out: list[LatentSequence | None] = [None] * len(conds)
        by_frames: dict[int, list] = {}
        for i, cond in enumerate(conds):
            by_frames.setdefault(len(cond) * self.frames_per_token_, []).append(i)
        for frames, idxs in by_frames.items():
            rngs = [base.substream(("predict", i)) for i in idxs]
            latents = euler_solve_batch(
                self.checkpoint_.params,
                (self.codebook_.channels, frames),
                [conds[i] for i in idxs],
                sc,
                rngs,
                self.codebook_.frame_rate,
            )
            for i, latent in zip(idxs, latents):
                out[i] = latent
        return out

    def predict(self, X, seed: int = 0) -> np.ndarray:
        """Decoded text for each entry of X (round trip through synthesis)."""
        latents = self.synthesize(X, seed=seed)
        texts = [render_text(oracle_decode(lat, self.codebook_)) for lat in latents]
        return np.asarray(texts, dtype=object)

    def score(self, X, y=None, seed: int = 0) -> float:
        """Negative micro-averaged CER (in %) against reference texts.

        X may be a list of ToyUtterance (y unused) or token sequences
        with y giving the reference strings.
        """
        check_is_fitted(self, "checkpoint_")
        if y is None:
            refs = [utt.text for utt in X]
            inputs = [utt.tokens for utt in X]
        else:
            refs = list(y)
            inputs = X
        hyps = self.predict(inputs, seed=seed)
        pooled = pool_reports([error_rates(r, h) for r, h in zip(refs, hyps)])
        return -pooled.cer


class LatentCorruptor(TransformerMixin, BaseEstimator):
    """Length-preserving repeat/skip corruption as a transformer.

    transform() accepts a list of LatentSequence or an array of shape
    (n, channels, frames) and returns the corrupted counterpart; the
    edit reports of the latest call are kept in ``outcomes_``.
    """

    def __init__(
        self,
        p_repeat: float = 0.5,
        mode: str | None = None,
        budget: float | None = None,
        seed: int = 0,
        frame_rate: float = 20.0,
    ):
        self.p_repeat = p_repeat
        self.mode = mode
        self.budget = budget
        self.seed = seed
        self.frame_rate = frame_rate

    def fit(self, X=None, y=None):
        if self.mode not in (None, "repeat", "skip"):
            raise ValueError(f"mode must be None, 'repeat' or 'skip', got {self.mode!r}")
        self.config_ = AugmentConfig(p_repeat=self.p_repeat, frame_rate=self.frame_rate)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        as_array = isinstance(X, np.ndarray)
        items = (
            [LatentSequence(np.asarray(x, dtype=np.float32), self.frame_rate) for x in X]
            if as_array
            else list(X)
        )
        mode = {None: None, "repeat": AugmentMode.REPEAT, "skip": AugmentMode.SKIP}[self.mode]
        base = SeededRng(self.seed)
        outcomes = []
        for i, x in enumerate(items):
            sil = LatentSequence(np.zeros_like(x.data), x.frame_rate)
            outcomes.append(
                augment(x, sil, base.substream(("corrupt", i)), self.config_, mode=mode, budget=self.budget)
            )
        self.outcomes_ = outcomes
        corrupted = [o.latent for o in outcomes]
        if as_array:
            return np.stack([c.data for c in corrupted])
        return corrupted


class CodebookCodec(TransformerMixin, BaseEstimator):
    """Token-sequence <-> latent codec backed by a generated codebook."""

    def __init__(
        self,
        vocab_size: int = 16,
        channels: int = 8,
        frames_per_token: int = 4,
        min_dist: float = 0.5,
        noise_sigma: float = 0.0,
        seed: int = 0,
    ):
        self.vocab_size = vocab_size
        self.channels = channels
        self.frames_per_token = frames_per_token
        self.min_dist = min_dist
        self.noise_sigma = noise_sigma
        self.seed = seed

    def fit(self, X=None, y=None):
        self.codebook_ = make_codebook(
            SeededRng(self.seed).substream("codebook"),
            vocab_size=self.vocab_size,
            channels=self.channels,
            frames_per_token=self.frames_per_token,
            min_dist=self.min_dist,
        )
        return self

    @property
    def silence_(self) -> LatentSequence:
        check_is_fitted(self, "codebook_")
        return silence_latent(self.codebook_, self.frames_per_token)

    def transform(self, X) -> list:
        """Encode each token sequence in X to a LatentSequence."""
        check_is_fitted(self, "codebook_")
        rng = SeededRng(self.seed).substream("encode-noise")
        out = []
        for tokens in X:
            if isinstance(tokens, str):
                tokens = tokens_from_text(tokens, self.vocab_size)
            out.append(encode(tokens, self.codebook_, self.noise_sigma, rng))
        return out

    def inverse_transform(self, X) -> list:
        """Decode each LatentSequence in X back to a token-id array."""
        check_is_fitted(self, "codebook_")
        return [oracle_decode(lat, self.codebook_) for lat in X]
