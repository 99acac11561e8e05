"""Run configuration: defaults, ``key = value`` files and flag overrides."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields

from .errors import ContractError, ParseError

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    # paths
    corpus: str = ""
    admissions: str = ""
    out: str = ""
    model_path: str = ""
    history: str = ""
    histogram: str = ""
    # data
    seed: int = 0
    split_seed: int = 0
    split: str = "test"
    n_docs: int = 2000
    vocab_size: int = 500
    noise_rate: float = 0.05
    positive_rate: float = 0.3
    anchor: str = "discharge"
    min_count: int = 1
    # model
    model: str = "infocal"
    epochs: int = 100
    batch_size: int = 32
    hidden: int = 128
    embedding_dim: int = 100
    embedding_epochs: int = 5
    embeddings: str = ""
    target_proportion: float = 0.3
    initial_lr: float = 0.001
    lambda_sparsity: float = 2.0
    lambda_continuity: float = 0.2
    lambda_adv: float = 0.02
    lambda_lm: float = 0.1
    lm_regularizer: bool = False
    gumbel_temperature: float = 0.5
    optimizer: str = "adam"
    d_model: int = 64
    n_layers: int = 2
    heads: int = 4
    lr: float = 1e-3
    patience: int = 3
    l2: float = 1e-3
    n_trees: int = 100
    max_depth: int = 0
    # evaluation and explanation
    threshold: float = 0.5
    method: str = "rationale"
    layer: int = -1
    strategy: str = "cls-to-token"
    epsilon: float = 1e-6
    doc_id: str = ""
    rationale: str = ""
    attention: str = ""
    lrp: str = ""
    format: str = "html"
    top_k: int = 0

    def to_dict(self):
        return asdict(self)

    def log_resolved(self, command, keys=None):
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        log.info("resolved config for %s: %s", command, json.dumps(d, sort_keys=True))


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
CHOICES = {
    "model": ("infocal", "transformer", "logreg", "rf"),
    "split": ("train", "val", "test", "heldout"),
    "anchor": ("discharge", "admit"),
    "method": ("rationale", "attention", "lrp"),
    "strategy": ("cls-to-token", "mean-over-heads"),
    "format": ("html", "ansi"),
    "optimizer": ("adam", "sgd"),
}


def coerce(key, raw):
    """Convert a raw string (or already-typed value) to the declared type of ``key``."""
    if key not in FIELD_TYPES:
        raise ContractError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        value = raw
    elif kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ContractError(f"{key}: cannot read {raw!r} as a boolean")
        value = low in ("true", "1", "yes")
    elif kind in ("int", "float"):
        try:
            value = int(raw) if kind == "int" else float(raw)
        except ValueError as exc:
            raise ContractError(f"{key}: cannot read {raw!r} as {kind}") from exc
    else:
        value = raw.strip()
    if key in CHOICES and value not in CHOICES[key]:
        raise ContractError(f"{key}={value!r}; expected one of {CHOICES[key]}")
    return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in FIELD_TYPES:
                raise ParseError(f"unknown config key {key!r}", lineno)
            try:
                out[key] = coerce(key, value)
            except ContractError as exc:
                raise ParseError(str(exc), lineno) from exc
    return out


def resolve(file_values=None, overrides=None) -> RunConfig:
    """Defaults, then file values, then explicit overrides (flags)."""
    values = {}
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            if v is not None:
                values[k] = coerce(k, v)
    return RunConfig(**values)
