"""Model and training configuration, flat ``key=value`` files, and ablation variants."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

DIVERSITY_MODES = ("off", "send", "smd", "full")
BATCH_ATTENTION_MODES = ("off", "batchformer", "full")
COATTN_ORDERS = ("default", "coa1", "coa2")
SENTIMENT_HEADS = ("sigmoid", "softmax")
PRIOR_MEANS = ("learned", "fixed")


@dataclass
class Config:
    # architecture (desk-scale defaults)
    d_model: int = 128
    d_ff: int = 512
    heads: int = 8
    decoder_layers: int = 2
    coattn_layers: int = 2
    posterior_layers: int = 1
    d_in: int = 32
    d_z: int = 128
    d_pre: int = 64
    n_classes: int = 3
    vocab_size: int = 200
    sigma: float = 0.2
    dropout: float = 0.1
    max_len: int = 20
    p_max: int = 60
    # module switches
    diversity: str = "full"
    mask_ratio: float = 0.30
    batch_attention: str = "full"
    coattention: bool = True
    coattn_order: str = "default"
    prior_means: str = "learned"
    kl_weighted_by_s: bool = False
    sentiment_head: str = "sigmoid"
    aux_weight: float = 1.0
    # optimisation
    lr: float = 1e-3
    lr_decay: float = 0.25
    decay_every: int = 2
    decay_after: int = 4
    batch_size: int = 32
    epochs: int = 20
    beta: float = 2.0
    gamma: float = 0.3
    grad_clip: float = 5.0
    test_fraction: float = 0.1
    seed: int = 0

    @classmethod
    def paper_scale(cls, **overrides) -> "Config":
        base = dict(d_model=512, d_ff=2048, heads=8, decoder_layers=6, coattn_layers=3,
                    d_pre=256, lr=1e-4, batch_size=128)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> "Config":
        if self.diversity not in DIVERSITY_MODES:
            raise ConfigError(f"diversity must be one of {DIVERSITY_MODES}, got {self.diversity!r}")
        if self.batch_attention not in BATCH_ATTENTION_MODES:
            raise ConfigError(f"batch_attention must be one of {BATCH_ATTENTION_MODES}")
        if self.coattn_order not in COATTN_ORDERS:
            raise ConfigError(f"coattn_order must be one of {COATTN_ORDERS}")
        if self.sentiment_head not in SENTIMENT_HEADS:
            raise ConfigError(f"sentiment_head must be one of {SENTIMENT_HEADS}")
        if self.prior_means not in PRIOR_MEANS:
            raise ConfigError(f"prior_means must be one of {PRIOR_MEANS}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by {self.heads} heads")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        for name in ("d_model", "d_ff", "heads", "decoder_layers", "coattn_layers", "d_in",
                     "d_z", "d_pre", "n_classes", "vocab_size", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("lr must be positive and beta/gamma nonnegative")
        return self

    # -- derived switches --------------------------------------------------
    @property
    def uses_sentiment(self) -> bool:
        return self.diversity in ("send", "full")

    @property
    def uses_latent(self) -> bool:
        return self.diversity in ("smd", "full")

    @property
    def latent_components(self) -> int:
        return self.n_classes if self.diversity == "full" else 1

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    # -- key=value serialization -------------------------------------------
    def dump(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return cls(**d)

    def update_from_text(self, text: str) -> "Config":
        kinds = {f.name: type(f.default) for f in fields(self)}
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            changes[key] = _parse(value, kinds[key], key)
        return self.replace(**changes)

    @classmethod
    def load(cls, path, base: "Config | None" = None) -> "Config":
        return (base or cls()).update_from_text(Path(path).read_text(encoding="utf-8"))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(value: str, kind: type, key: str):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        return kind(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


VARIANTS = {
    "full": {},
    "no-diversity": {"diversity": "off"},
    "send": {"diversity": "send"},
    "smd": {"diversity": "smd"},
    "no-mask": {"mask_ratio": 0.0},
    "no-batchattn": {"batch_attention": "off"},
    "batchformer": {"batch_attention": "batchformer"},
}

ABLATION_GRIDS = {
    "diversity": [("no-diversity", {"diversity": "off"}), ("send", {"diversity": "send"}),
                  ("smd", {"diversity": "smd"}), ("full", {})],
    "mask": [(f"lambda={r:.2f}", {"mask_ratio": r}) for r in (0.0, 0.15, 0.30, 0.45)],
    "batchattn": [("no-batchattn", {"batch_attention": "off"}),
                  ("batchformer", {"batch_attention": "batchformer"}),
                  ("batch-size=64", {"batch_size": 64}), ("full", {})],
    "loss": [(f"beta={b},gamma={g}", {"beta": b, "gamma": g})
             for b, g in ((0.5, 1.0), (1.0, 1.0), (1.5, 1.0), (2.0, 1.0), (2.5, 1.0),
                          (2.0, 0.1), (2.0, 0.5), (2.0, 1.5), (2.0, 0.3))],
    "coattention": [("no-coattention", {"coattention": False}), ("coa1", {"coattn_order": "coa1"}),
                    ("coa2", {"coattn_order": "coa2"}), ("full", {})],
}


def apply_variant(cfg: Config, variant: str) -> Config:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return cfg.replace(**VARIANTS[variant])
