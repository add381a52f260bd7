"""Flat ``key = value`` run configuration with variant-derived loss weights.

The file format is line oriented: blank lines and ``#`` comments are
ignored, every other line must be ``key = value``. The full key set
lives in the KEYS registry below; unknown keys, bad values and broken
invariants all raise ConfigError naming the offending key.

``variant`` is the one required key. It selects the loss weights

    baseline     -> (0.0, 0.0)
    contrastive  -> (0.2, 0.0)
    robust       -> (0.2, 0.2)

unless lambda_rand / lambda_aug are set explicitly. The resolved
configuration can be echoed back as text; explicitly-set keys that
differ from their derived defaults carry an ``# override`` marker so a
reader can spot deviations from the stock setup at a glance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import ConfigError
from .flowmatch import LossWeights
from .toyspeech import DatasetConfig
from .vectorfield import ModelConfig

VARIANTS = ("baseline", "contrastive", "robust")

VARIANT_WEIGHTS = {
    "baseline": (0.0, 0.0),
    "contrastive": (0.2, 0.0),
    "robust": (0.2, 0.2),
}


def _parse_int(s: str) -> int:
    return int(s, 10)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_str(s: str) -> str:
    return s


def _parse_variant(s: str) -> str:
    if s not in VARIANTS:
        raise ValueError(f"expected one of {', '.join(VARIANTS)}")
    return s


def _parse_int_list(s: str) -> tuple:
    items = [p.strip() for p in s.split(",") if p.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p, 10) for p in items)


def _parse_opt_float(s: str):
    if s.lower() in ("none", "auto"):
        return None
    return float(s)


# key -> (parser, default); None default means "derived later" or required
KEYS = {
    "variant": (_parse_variant, None),
    "seed": (_parse_int, 0),
    "out_dir": (_parse_str, "run_out"),
    "total_steps": (_parse_int, 20000),
    "batch_size": (_parse_int, 16),
    "eval_every": (_parse_int, 1000),
    "lambda_rand": (_parse_float, None),
    "lambda_aug": (_parse_float, None),
    "lr": (_parse_float, 5e-4),
    "beta1": (_parse_float, 0.9),
    "beta2": (_parse_float, 0.999),
    "halve_lr_every": (_parse_int, 0),
    "embed_dim": (_parse_int, 16),
    "hidden_dim": (_parse_int, 64),
    "num_layers": (_parse_int, 3),
    "context_window": (_parse_int, 5),
    "time_embed_dim": (_parse_int, 16),
    "pos_embed_dim": (_parse_int, 8),
    "uncond_prob": (_parse_float, 0.1),
    "vocab_size": (_parse_int, 16),
    "channels": (_parse_int, 8),
    "frames_per_token": (_parse_int, 4),
    "codebook_min_dist": (_parse_float, 0.5),
    "frame_rate": (_parse_float, 20.0),
    "train_size": (_parse_int, 5000),
    "eval_size": (_parse_int, 200),
    "tokens_per_utterance": (_parse_int, 12),
    "noise_sigma": (_parse_opt_float, None),
    "p_repeat": (_parse_float, 0.5),
    "eval_nfe": (_parse_int_list, (12, 24)),
    "eval_seeds": (_parse_int_list, (1, 2)),
    "cfg_weight": (_parse_float, 3.0),
}


@dataclass
class RunConfig:
    """A fully-resolved training run description."""

    values: dict
    explicit: set = field(default_factory=set)

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.values["lambda_rand"], self.values["lambda_aug"])

    @property
    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            vocab_size=v["vocab_size"],
            channels=v["channels"],
            embed_dim=v["embed_dim"],
            hidden_dim=v["hidden_dim"],
            num_layers=v["num_layers"],
            context_window=v["context_window"],
            time_embed_dim=v["time_embed_dim"],
            pos_embed_dim=v["pos_embed_dim"],
            uncond_prob=v["uncond_prob"],
        )

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(p_repeat=self.values["p_repeat"], frame_rate=self.values["frame_rate"])

    @property
    def dataset_config(self) -> DatasetConfig:
        v = self.values
        return DatasetConfig(
            train_size=v["train_size"],
            eval_size=v["eval_size"],
            tokens_per_utterance=v["tokens_per_utterance"],
            noise_sigma=v["noise_sigma"],
        )

    def echo_lines(self) -> list:
        """The resolved config as parse-compatible text lines."""
        lines = []
        for key in KEYS:
            value = self.values[key]
            if isinstance(value, tuple):
                text = ",".join(str(x) for x in value)
            elif value is None:
                text = "none"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            default = _derived_default(key, self.values)
            marker = ""
            if key in self.explicit and default is not None and value != default:
                marker = "  # override"
            lines.append(f"{key} = {text}{marker}")
        return lines


def _derived_default(key: str, values: dict):
    if key in ("lambda_rand", "lambda_aug"):
        pair = VARIANT_WEIGHTS[values["variant"]]
        return pair[0] if key == "lambda_rand" else pair[1]
    return KEYS[key][1]


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text plus optional CLI-level overrides (both strings)."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        raw[key] = value

    explicit = set(raw)
    values: dict = {}
    for key, (parser, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: invalid value {raw[key]!r} ({exc})") from exc
        else:
            values[key] = default

    if values["variant"] is None:
        raise ConfigError("missing required key 'variant' (baseline | contrastive | robust)")
    lam = VARIANT_WEIGHTS[values["variant"]]
    if values["lambda_rand"] is None:
        values["lambda_rand"] = lam[0]
    if values["lambda_aug"] is None:
        values["lambda_aug"] = lam[1]

    cfg = RunConfig(values=values, explicit=explicit)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    checks = [
        ("total_steps", v["total_steps"] >= 0, ">= 0"),
        ("batch_size", v["batch_size"] >= 1, ">= 1"),
        ("eval_every", v["eval_every"] >= 1, ">= 1"),
        ("lr", v["lr"] > 0, "> 0"),
        ("halve_lr_every", v["halve_lr_every"] >= 0, ">= 0"),
        ("seed", v["seed"] >= 0, ">= 0"),
        ("eval_nfe", all(n >= 1 for n in v["eval_nfe"]), "all >= 1"),
    ]
    for key, ok, want in checks:
        if not ok:
            raise ConfigError(f"key {key!r}: must be {want}, got {v[key]}")
    if v["lambda_rand"] > 0 and v["batch_size"] < 2:
        raise ConfigError("key 'batch_size': must be >= 2 when lambda_rand > 0")
    # constructor invariants become config errors with the key set named
    for prop, keys in (
        ("model_config", "embed_dim/hidden_dim/num_layers/context_window/time_embed_dim/uncond_prob"),
        ("augment_config", "p_repeat/frame_rate"),
        ("dataset_config", "train_size/eval_size/tokens_per_utterance"),
        ("weights", "lambda_rand/lambda_aug"),
    ):
        try:
            getattr(cfg, prop)
        except ValueError as exc:
            raise ConfigError(f"invalid {keys}: {exc}") from exc
    if v["vocab_size"] < 2:
        raise ConfigError(f"key 'vocab_size': must be >= 2, got {v['vocab_size']}")
    if v["frames_per_token"] < 1:
        raise ConfigError(f"key 'frames_per_token': must be >= 1, got {v['frames_per_token']}")
    if v["codebook_min_dist"] <= 0:
        raise ConfigError("key 'codebook_min_dist': must be > 0")


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), overrides)


def write_resolved_config(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / "resolved_config.txt"
    out.write_text("\n".join(cfg.echo_lines()) + "\n", encoding="utf-8")
    return out
