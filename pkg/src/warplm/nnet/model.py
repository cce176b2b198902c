"""Transformer encoder: configuration, parameter layout, initialization.

The model is a plain numpy parameter dictionary plus a config. Input and
output token embeddings are tied (one [V, d_model] matrix used for both),
with a separate output bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..seeding import derive_seed

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 6:
            raise ValueError("vocab_size must cover the special tokens")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def desk(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Small preset that trains in seconds on a CPU."""
        kw = dict(d_model=64, n_layers=2, n_heads=4, d_ff=256, max_len=64)
        kw.update(overrides)
        return cls(vocab_size=vocab_size, **kw)

    @classmethod
    def base(cls, vocab_size: int = 30000, **overrides) -> "ModelConfig":
        """Full-scale preset (~53.5M parameters at vocab 30k)."""
        kw = dict(d_model=512, n_layers=12, n_heads=16, d_ff=2048, max_len=512)
        kw.update(overrides)
        return cls(vocab_size=vocab_size, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in a stable order."""
    V, D, F = config.vocab_size, config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (V, D),
        "pos_emb": (config.max_len, D),
    }
    for l in range(config.n_layers):
        p = f"layers.{l}."
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        for nm in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{nm}"] = (D, D)
            shapes[p + f"attn.b{nm}"] = (D,)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
        shapes[p + "ffn.w1"] = (D, F)
        shapes[p + "ffn.b1"] = (F,)
        shapes[p + "ffn.w2"] = (F, D)
        shapes[p + "ffn.b2"] = (D,)
    shapes["final_ln.g"] = (D,)
    shapes["final_ln.b"] = (D,)
    shapes["out_bias"] = (V,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Total trainable scalars (embeddings tied, counted once)."""
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass
class EncoderModel:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "EncoderModel":
        return EncoderModel(
            self.config, {k: v.astype(dtype) for k, v in self.params.items()}
        )


def init_model(config: ModelConfig, seed: int = 0) -> EncoderModel:
    """Weights ~ N(0, 0.02^2); layer-norm gains 1; all biases 0. float32."""
    rng = np.random.default_rng(derive_seed(seed, 0xE0))
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape, dtype=np.float32)
        elif leaf in ("b", "b1", "b2", "bq", "bk", "bv", "bo", "out_bias"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, INIT_STD, size=shape).astype(np.float32)
        params[name] = arr
    return EncoderModel(config, params)
