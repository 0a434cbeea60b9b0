"""Flat key=value configuration with dotted-path overrides.

Every run writes its resolved configuration next to its outputs so any
artifact can be reproduced from the snapshot plus the input files.
"""

from __future__ import annotations

from pathlib import Path

from .data import SyntheticSpec
from .policy import TrainHyper

DEFAULTS: dict[str, object] = {
    "variant": "gated",
    "seed": 7,
    # dataset: a directory produced by `generate` (or an exporter). Synthetic
    # generation parameters are used by the `generate` subcommand only.
    "data.synthetic.num_videos": 200,
    "data.synthetic.n_frames": 200,
    "data.synthetic.fps": 24.0,
    "data.synthetic.dim": 16,
    "data.synthetic.vocab_size": 32,
    "data.synthetic.clip_len_mean": 40,
    "data.synthetic.clip_len_jitter": 10,
    "data.synthetic.query_len": 3,
    "data.synthetic.signal_strength": 1.0,
    "data.synthetic.noise_scale": 0.5,
    "data.synthetic.seed": 7,
    "split.train": 0.5,
    "split.val": 0.25,
    "split.test": 0.25,
    "split.seed": 0,
    "model.embed_dim": 64,
    "model.gru_hidden": 256,
    "model.fc_dim": 256,
    "model.lstm_dim": 256,
    "model.init_gain": 1.0,
    "train.beta": 0.01,
    "train.entropy_coef": 0.5,
    "train.value_coef": 0.5,
    "train.lr": 0.0005,
    "train.lr_final": 0.0,
    "train.discount": 0.99,
    "train.gae_lambda": 0.95,
    "train.workers": 8,
    "train.t_max": 30,
    "train.grad_clip_norm": 40.0,
    "train.total_episodes": 20000,
    "train.checkpoint_every": 5000,
    "train.terminal_bonus": 0.0,
    "train.deterministic": False,
    "train.early_bias": 0.0,
    "train.select_best": False,
    "train.select_frames_budget": 0.0,
    "train.update_horizon": 0,
    "eval.alphas": "0.3,0.5,0.7",
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


class Config:
    """Typed view over the flat key space in ``DEFAULTS``."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                self.set(k, v if isinstance(v, str) else str(v))

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        self._values[key] = _coerce(key, raw)

    def __getitem__(self, key: str):
        return self._values[key]

    def synthetic_spec(self) -> SyntheticSpec:
        g = lambda k: self._values[f"data.synthetic.{k}"]
        return SyntheticSpec(
            num_videos=g("num_videos"), n_frames=g("n_frames"), fps=g("fps"),
            dim=g("dim"), vocab_size=g("vocab_size"),
            clip_len_mean=g("clip_len_mean"),
            clip_len_jitter=g("clip_len_jitter"), query_len=g("query_len"),
            signal_strength=g("signal_strength"),
            noise_scale=g("noise_scale"), seed=g("seed"))

    def hyper(self) -> TrainHyper:
        g = lambda k: self._values[f"train.{k}"]
        h = TrainHyper(beta=g("beta"), entropy_coef=g("entropy_coef"),
                       value_coef=g("value_coef"), lr=g("lr"),
                       lr_final=g("lr_final"),
                       discount=g("discount"), gae_lambda=g("gae_lambda"),
                       workers=g("workers"), t_max=g("t_max"),
                       grad_clip_norm=g("grad_clip_norm"),
                       update_horizon=g("update_horizon"))
        h.validate()
        return h

    def split_fractions(self) -> tuple[float, float, float]:
        return (self._values["split.train"], self._values["split.val"],
                self._values["split.test"])

    def alphas(self) -> list[float]:
        return [float(a) for a in str(self._values["eval.alphas"]).split(",")]

    def write(self, path) -> None:
        lines = [f"{k} = {self._values[k]}" for k in sorted(self._values)]
        Path(path).write_text("\n".join(lines) + "\n")


def load_config(path) -> Config:
    cfg = Config()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            cfg.set(key, raw)
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
    return cfg


def apply_overrides(cfg: Config, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        cfg.set(key, raw)
