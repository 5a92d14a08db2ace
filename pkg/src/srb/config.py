"""Run configuration: task profiles, ``key = value`` files and flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from srb.errors import ConfigError
from srb.model import ModelConfig

PROFILES: dict[str, dict[str, Any]] = {
    "summarization": dict(
        tokenize_mode="char", vocab_size=4000, embed_dim=400, hidden_dim=500,
        gate_hidden_dim=1000, batch_size=32, lambda_sr=0.0001, dropout_rate=0.0,
        corpus="lcsts",
    ),
    "simplification": dict(
        tokenize_mode="word", vocab_size=50000, embed_dim=256, hidden_dim=256,
        gate_hidden_dim=256, batch_size=64, lambda_sr=0.0001, dropout_rate=0.4,
        anonymize=True, corpus="pwkp",
    ),
    "toy": dict(
        tokenize_mode="word", vocab_size=30, embed_dim=32, hidden_dim=64,
        gate_hidden_dim=32, batch_size=16, lambda_sr=0.0001, dropout_rate=0.0,
        max_epochs=500, corpus="plain",
    ),
}

CORPORA = ("plain", "lcsts", "pwkp", "ewsew")


@dataclass
class RunConfig:
    profile: str = "toy"
    # model
    vocab_size: int = 30
    embed_dim: int = 32
    hidden_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    gate_hidden_dim: int = 32
    dropout_rate: float = 0.0
    lambda_sr: float = 0.0001
    # optimisation
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 5
    eval_every: int = 1
    stop_nll: float = 0.0
    seed: int = 0
    # data
    corpus: str = "plain"
    tokenize_mode: str = "word"
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    reference_paths: str = ""
    vocab_path: str = ""
    max_train_len: int = 100
    anonymize: bool = False
    tagger_labels: str = ""
    entity_slots: int = 10
    pwkp_join_simple: bool = True
    # outputs
    out_dir: str = "run"
    checkpoint: str = ""
    max_decode_len: int = 0
    attention_path: str = ""
    input_path: str = ""
    output_path: str = ""
    decoded_path: str = ""
    report_path: str = ""
    toy_task: str = "copy"
    toy_size: int = 200

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.corpus not in CORPORA:
            raise ConfigError(f"unknown corpus {self.corpus!r}; choose from {CORPORA}")
        if self.tokenize_mode not in ("char", "word"):
            raise ConfigError(f"tokenize_mode must be char or word, got {self.tokenize_mode!r}")
        for name in ("batch_size", "max_epochs", "eval_every", "max_train_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.clip_norm <= 0 or self.learning_rate <= 0:
            raise ConfigError("clip_norm and learning_rate must be positive")
        self.model_config()

    def model_config(self, vocab_size: int | None = None) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size if vocab_size is None else vocab_size,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            gate_hidden_dim=self.gate_hidden_dim,
            dropout_rate=self.dropout_rate,
            lambda_sr=self.lambda_sr,
        )

    def to_text(self) -> str:
        """Effective configuration in the same ``key = value`` format it is read from."""
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def parse_overrides(args: Sequence[str]) -> dict[str, str]:
    """``--key=value`` (or ``--key value``) flags; dashes in keys become underscores."""
    out: dict[str, str] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            key, value = body.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"flag {arg} needs a value")
            key, value = body, args[i + 1]
            i += 1
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown option --{key}")
        out[key] = value
        i += 1
    return out


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Profile defaults, then the config file, then flag overrides (flags win)."""
    from_file = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    flags = dict(overrides or {})
    merged = {**from_file, **flags}
    profile = merged.get("profile", "toy").strip()
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values: dict[str, Any] = dict(PROFILES[profile])
    values.update({k: _coerce(k, v) for k, v in merged.items()})
    values["profile"] = profile
    return RunConfig(**values)
