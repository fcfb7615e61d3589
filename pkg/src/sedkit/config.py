"""Run configuration: TOML file loading, defaults, overrides, content hash.

Sections mirror module names (``[corpus]``, ``[stft]``, ``[sv]``,
``[enhancer]``, ``[gate]``, ``[finetune]``, ``[eval]``). CLI flags override
config keys. Every artifact written by the pipeline records the hash of the
resolved configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

ALLOWED_K = (2, 5, 10)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    # corpus
    corpus_dir: str | None = None          # load existing corpus if set
    n_speakers: int = 8
    utterances_per_speaker: int = 10
    n_val_speakers: int = 4
    n_test_speakers: int = 4
    # stft
    frame_size: int = 1024
    hop: int = 256
    sample_rate: int = 8000
    # model shape
    k: int = 2
    hidden: int = 32
    allow_any_k: bool = False
    # training budgets (steps) and batch sizes; the paper-scale defaults
    # (batch 128, lr 1e-3 / 1e-4) are overridable for desk-scale runs
    batch_size: int = 128
    lr_train: float = 1e-3
    lr_finetune: float = 1e-4
    sv_steps: int = 600
    sv_batch_pairs: int = 24
    enh_steps: int = 300
    enh_batch: int = 12
    gate_steps: int = 250
    gate_batch: int = 32
    finetune_steps: int = 150
    finetune_batch: int = 8
    crop_samples: int = 16384
    # evaluation
    eval_per_snr: int = 8
    eval_uniform: int = 16
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.k not in ALLOWED_K and not self.allow_any_k:
            raise ConfigError(
                f"K={self.k} not in {ALLOWED_K}; set allow_any_k to override")
        if self.frame_size != 4 * self.hop:
            raise ConfigError("hop must be frame_size/4 (75% overlap)")
        for name in ("sv_steps", "enh_steps", "gate_steps", "finetune_steps",
                     "batch_size", "hidden", "n_speakers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")  # artifact location does not change the run
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTION_KEYS = {
    "corpus": {"corpus_dir", "n_speakers", "utterances_per_speaker",
               "n_val_speakers", "n_test_speakers"},
    "stft": {"frame_size", "hop", "sample_rate"},
    "model": {"k", "hidden", "allow_any_k"},
    "train": {"batch_size", "lr_train", "lr_finetune", "sv_steps",
              "sv_batch_pairs", "enh_steps", "enh_batch", "gate_steps",
              "gate_batch", "finetune_steps", "finetune_batch",
              "crop_samples"},
    "eval": {"eval_per_snr", "eval_uniform"},
}
_TOP_KEYS = {"seed", "out_dir"}


def from_mapping(doc: dict) -> RunConfig:
    cfg = RunConfig()
    for key in _TOP_KEYS:
        if key in doc:
            setattr(cfg, key, doc[key])
    for section, keys in _SECTION_KEYS.items():
        body = doc.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section}] must be a table")
        for k, v in body.items():
            if k not in keys:
                raise ConfigError(f"unknown key {k!r} in section [{section}]")
            setattr(cfg, k, v)
    known = _TOP_KEYS | set(_SECTION_KEYS)
    for k in doc:
        if k not in known:
            cfg.extra[k] = doc[k]
    return cfg.validate()


def load_config(path) -> RunConfig:
    with open(path, "rb") as f:
        try:
            doc = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    return from_mapping(doc)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply non-None CLI flag values on top of a loaded config."""
    for k, v in overrides.items():
        if v is None:
            continue
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown override {k!r}")
        setattr(cfg, k, v)
    return cfg.validate()
