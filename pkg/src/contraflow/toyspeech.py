"""Synthetic token-codebook stand-in for a speech codec and recognizer.

Each token id owns a random C x F latent pattern; an utterance's latent is
the concatenation of its token patterns (plus optional Gaussian noise), and
the oracle decoder inverts that by nearest-pattern lookup per F-frame
group. Because encode/decode are exact at low noise, repeat/skip damage to
a latent becomes directly measurable as token-level errors without any
external recognizer.

Token ids render to two-letter syllables ("ba", "de", ...) so character and
word error rates are both meaningful on the toy text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import CodebookGenerationError, FileFormatError, VocabError
from .latent import LatentSequence, ltnt_bytes, ltnt_from_bytes
from .rng import SeededRng

_CONSONANTS = "bdkmprstgln"
_VOWELS = "aeiou"

_CBOK_MAGIC = b"CBOK"
_CBOK_VERSION = 1
# field tags for the CBOK header section
_TAG_VOCAB, _TAG_CHANNELS, _TAG_FRAMES_PER_TOKEN, _TAG_FRAME_RATE, _TAG_MIN_DIST = 1, 2, 3, 4, 5

_PATTERN_TRIES = 200


def token_name(token_id: int) -> str:
    """Stable two-letter syllable for a token id (falls back past the grid)."""
    grid = len(_CONSONANTS) * len(_VOWELS)
    if 0 <= token_id < grid:
        return _CONSONANTS[token_id // len(_VOWELS)] + _VOWELS[token_id % len(_VOWELS)]
    return f"q{token_id}"


def render_text(tokens) -> str:
    return " ".join(token_name(int(t)) for t in tokens)


def tokens_from_text(text: str, vocab_size: int) -> np.ndarray:
    """Inverse of render_text for the CLI's --text flag."""
    names = {token_name(i): i for i in range(vocab_size)}
    ids = []
    for word in text.split():
        if word not in names:
            raise VocabError(f"unknown token name {word!r} (vocab size {vocab_size})")
        ids.append(names[word])
    return np.asarray(ids, dtype=np.int64)


@dataclass
class Codebook:
    """K random latent patterns plus a reserved all-zero silence pattern.

    ``patterns`` has shape (K+1, channels, frames_per_token); index K is
    silence. ``min_pairwise_distance`` is the realized minimum mean-squared
    distance over all pattern pairs, recorded at generation time.
    """

    vocab_size: int
    frames_per_token: int
    patterns: np.ndarray = field(repr=False)
    min_pairwise_distance: float = 0.0
    frame_rate: float = 20.0

    @property
    def channels(self) -> int:
        return self.patterns.shape[1]

    @property
    def silence_id(self) -> int:
        return self.vocab_size


def _pattern_mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def make_codebook(
    rng: SeededRng,
    vocab_size: int = 16,
    channels: int = 8,
    frames_per_token: int = 4,
    min_dist: float = 0.5,
    frame_rate: float = 20.0,
) -> Codebook:
    """Rejection-sample unit-scale patterns until all pairs are separated.

    Each candidate is i.i.d. standard normal and accepted only if its
    mean-squared distance to every already-accepted pattern (silence
    included) is >= ``min_dist``; a candidate gets a bounded number of
    retries before generation fails.
    """
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    silence = np.zeros((channels, frames_per_token), dtype=np.float32)
    accepted: list[np.ndarray] = [silence]
    for _ in range(vocab_size):
        for attempt in range(_PATTERN_TRIES + 1):
            if attempt == _PATTERN_TRIES:
                raise CodebookGenerationError(
                    f"could not separate {vocab_size} patterns at min_dist={min_dist}; "
                    "reduce vocab_size or increase channels*frames_per_token"
                )
            cand = rng.normal((channels, frames_per_token))
            if all(_pattern_mse(cand, prev) >= min_dist for prev in accepted):
                accepted.append(cand)
                break
    patterns = np.stack(accepted[1:] + [silence])  # tokens 0..K-1, then silence at K
    dmin = min(
        _pattern_mse(patterns[i], patterns[j])
        for i in range(len(patterns))
        for j in range(i + 1, len(patterns))
    )
    return Codebook(vocab_size, frames_per_token, patterns, dmin, frame_rate)


def encode(
    tokens, codebook: Codebook, noise_sigma: float = 0.0, rng: SeededRng | None = None
) -> LatentSequence:
    """Concatenate token patterns along the frame axis, plus optional noise."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.size == 0:
        raise VocabError("cannot encode an empty token sequence")
    if ids.min() < 0 or ids.max() >= codebook.vocab_size:
        raise VocabError(f"token ids must lie in [0, {codebook.vocab_size})")
    data = np.concatenate([codebook.patterns[i] for i in ids], axis=1)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        data = data + noise_sigma * rng.normal(data.shape)
    return LatentSequence(data.astype(np.float32), codebook.frame_rate)


def oracle_decode(latent: LatentSequence, codebook: Codebook) -> np.ndarray:
    """Nearest-pattern decode per F-frame group; silence groups are dropped.

    Consecutive duplicates are kept (each group is one token slot). A
    trailing remainder shorter than F frames is ignored; synthesized
    latents always have T divisible by F so this only matters for
    hand-built inputs.
    """
    F = codebook.frames_per_token
    groups = latent.frames // F
    if groups == 0:
        return np.asarray([], dtype=np.int64)
    x = latent.data[:, : groups * F].reshape(latent.channels, groups, F)
    x = np.transpose(x, (1, 0, 2)).astype(np.float64)  # (G, C, F)
    pats = codebook.patterns.astype(np.float64)  # (K+1, C, F)
    d = x[:, None, :, :] - pats[None, :, :, :]
    dists = np.mean(d * d, axis=(2, 3))  # (G, K+1)
    nearest = np.argmin(dists, axis=1)
    return nearest[nearest != codebook.silence_id].astype(np.int64)


def silence_latent(codebook: Codebook, frames: int) -> LatentSequence:
    """The silence pattern tiled (and truncated) to the requested length."""
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    pat = codebook.patterns[codebook.silence_id]
    reps = -(-frames // codebook.frames_per_token)
    data = np.tile(pat, (1, reps))[:, :frames]
    return LatentSequence(data.copy(), codebook.frame_rate)


# -- toy dataset ---------------------------------------------------------


@dataclass
class ToyUtterance:
    tokens: np.ndarray
    text: str
    latent: LatentSequence = field(repr=False)


@dataclass
class DatasetConfig:
    train_size: int = 5000
    eval_size: int = 200
    tokens_per_utterance: int = 12
    noise_sigma: float | None = None  # None: 0.1 * sqrt(codebook margin)

    def __post_init__(self):
        if self.train_size < 1 or self.eval_size < 1:
            raise ValueError("train_size and eval_size must be >= 1")
        if self.tokens_per_utterance < 1:
            raise ValueError("tokens_per_utterance must be >= 1")


def resolve_noise_sigma(cfg: DatasetConfig, codebook: Codebook) -> float:
    if cfg.noise_sigma is not None:
        return cfg.noise_sigma
    return 0.1 * float(np.sqrt(codebook.min_pairwise_distance))


def gen_dataset(
    cfg: DatasetConfig, codebook: Codebook, rng: SeededRng
) -> tuple[list[ToyUtterance], list[ToyUtterance]]:
    """Sample fixed-length utterances with content-disjoint train/eval splits.

    Eval sequences are resampled until their token tuples collide with
    neither the train set nor each other, so the split contract holds by
    construction. Regeneration with the same rng key is identical.
    """
    sigma = resolve_noise_sigma(cfg, codebook)
    token_rng = rng.substream("tokens")
    L, K = cfg.tokens_per_utterance, codebook.vocab_size

    def draw_tokens() -> np.ndarray:
        return np.asarray([token_rng.integers(0, K - 1) for _ in range(L)], dtype=np.int64)

    train_keys: set[tuple] = set()
    train_tokens: list[np.ndarray] = []
    for _ in range(cfg.train_size):
        toks = draw_tokens()
        train_keys.add(tuple(toks))
        train_tokens.append(toks)

    eval_keys: set[tuple] = set()
    eval_tokens: list[np.ndarray] = []
    while len(eval_tokens) < cfg.eval_size:
        toks = draw_tokens()
        key = tuple(toks)
        if key in train_keys or key in eval_keys:
            continue
        eval_keys.add(key)
        eval_tokens.append(toks)

    def build(split: str, token_list: list[np.ndarray]) -> list[ToyUtterance]:
        utts = []
        for i, toks in enumerate(token_list):
            noise_rng = rng.substream(("noise", split, i))
            latent = encode(toks, codebook, sigma, noise_rng)
            utts.append(ToyUtterance(toks, render_text(toks), latent))
        return utts

    return build("train", train_tokens), build("eval", eval_tokens)


# -- serialization -------------------------------------------------------


def codebook_bytes(cb: Codebook) -> bytes:
    payload = _CBOK_MAGIC + struct.pack("<B", _CBOK_VERSION)
    payload += binio.pack_fields(
        [
            (_TAG_VOCAB, 1, cb.vocab_size),
            (_TAG_CHANNELS, 1, cb.channels),
            (_TAG_FRAMES_PER_TOKEN, 1, cb.frames_per_token),
            (_TAG_FRAME_RATE, 3, cb.frame_rate),
            (_TAG_MIN_DIST, 4, cb.min_pairwise_distance),
        ]
    )
    payload += binio.pack_array_f32(cb.patterns)
    return binio.with_checksum(payload)


def codebook_from_bytes(blob: bytes) -> Codebook:
    payload = binio.verify_checksum(blob)
    if payload[:4] != _CBOK_MAGIC:
        raise FileFormatError("not a CBOK file (bad magic)")
    (version,) = struct.unpack_from("<B", payload, 4)
    if version != _CBOK_VERSION:
        raise FileFormatError(f"unsupported CBOK version {version}")
    fields, offset = binio.unpack_fields(payload, 5)
    try:
        K = int(fields[_TAG_VOCAB])
        C = int(fields[_TAG_CHANNELS])
        F = int(fields[_TAG_FRAMES_PER_TOKEN])
        frame_rate = float(fields[_TAG_FRAME_RATE])
        min_dist = float(fields[_TAG_MIN_DIST])
    except KeyError as exc:
        raise FileFormatError(f"CBOK header missing field {exc}") from exc
    patterns, offset = binio.unpack_array_f32(payload, offset, (K + 1, C, F))
    if offset != len(payload):
        raise FileFormatError("trailing bytes after CBOK patterns")
    return Codebook(K, F, patterns, min_dist, frame_rate)


def write_codebook(path, cb: Codebook) -> None:
    with open(path, "wb") as fh:
        fh.write(codebook_bytes(cb))


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        return codebook_from_bytes(fh.read())


def save_utterances(path, utts: list[ToyUtterance]) -> None:
    """Newline-delimited records: space-joined token ids, TAB, LTNT hex."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt in utts:
            ids = " ".join(str(int(t)) for t in utt.tokens)
            fh.write(f"{ids}\t{ltnt_bytes(utt.latent).hex()}\n")


def load_utterances(path) -> list[ToyUtterance]:
    utts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                ids_part, hex_part = line.split("\t")
                tokens = np.asarray([int(t) for t in ids_part.split()], dtype=np.int64)
                latent = ltnt_from_bytes(bytes.fromhex(hex_part))
            except (ValueError, FileFormatError) as exc:
                raise FileFormatError(f"{path}:{lineno}: bad dataset record: {exc}") from exc
            utts.append(ToyUtterance(tokens, render_text(tokens), latent))
    return utts
