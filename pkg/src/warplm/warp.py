"""Sequence warping: corruption plans and their application.

A plan assigns at most one operation per original position:

    MASK    replace the token with the mask token, predict the original
    KEEP    leave the token, still predict it
    RAND    replace with a random token, predict the original
    INSERT  insert a random token before this position, labeled INS
    DROP    delete the token; the next token's label becomes the deleted token

INSERT and DROP change sequence length, so labels live on the *warped*
sequence. Two plan shapes are illegal because they would give one warped
position two labels: any operation at the position right after a DROP, and a
DROP at the final position (its label would have no carrier). `repair_plan`
removes both.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed
from .textcore import INS_ID, MASK_ID, N_SPECIALS, PAD_ID, Vocab


class WarpOp(enum.Enum):
    MASK = "MASK"
    KEEP = "KEEP"
    RAND = "RAND"
    INSERT = "INSERT"
    DROP = "DROP"


# Fixed order for sampling buckets; changing it changes RNG streams.
OP_ORDER = (WarpOp.MASK, WarpOp.KEEP, WarpOp.RAND, WarpOp.INSERT, WarpOp.DROP)

IGNORE_LABEL = PAD_ID  # label filler at positions with predict_mask false


@dataclass(frozen=True)
class WarpConfig:
    """Per-position selection probability and the op split among selected."""

    p_select: float = 0.15
    proportions: dict[WarpOp, float] = field(
        default_factory=lambda: dict(WLM_PROPORTIONS)
    )

    def __post_init__(self):
        if not 0.0 <= self.p_select <= 1.0:
            raise ValueError("p_select must be in [0, 1]")
        total = 0.0
        for op in OP_ORDER:
            p = self.proportions.get(op, 0.0)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"proportion for {op.value} must be in [0, 1]")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"proportions sum to {total}, expected 1")

    @classmethod
    def mlm(cls, p_select: float = 0.15) -> "WarpConfig":
        return cls(p_select, dict(MLM_PROPORTIONS))

    @classmethod
    def wlm(cls, p_select: float = 0.15) -> "WarpConfig":
        return cls(p_select, dict(WLM_PROPORTIONS))

    @classmethod
    def for_objective(cls, objective: str, p_select: float = 0.15) -> "WarpConfig":
        if objective == "mlm":
            return cls.mlm(p_select)
        if objective == "wlm":
            return cls.wlm(p_select)
        raise ValueError(f"unknown objective {objective!r} (expected mlm or wlm)")


MLM_PROPORTIONS = {
    WarpOp.MASK: 0.8,
    WarpOp.KEEP: 0.1,
    WarpOp.RAND: 0.1,
    WarpOp.INSERT: 0.0,
    WarpOp.DROP: 0.0,
}

WLM_PROPORTIONS = {
    WarpOp.MASK: 0.6,
    WarpOp.KEEP: 0.1,
    WarpOp.RAND: 0.1,
    WarpOp.INSERT: 0.1,
    WarpOp.DROP: 0.1,
}


@dataclass
class WarpPlan:
    """Op assignment over original positions, plus the seed that produced it."""

    seq_len: int
    ops: dict[int, WarpOp]
    rng_seed: int = 0

    def __post_init__(self):
        if self.seq_len < 0:
            raise ValueError("seq_len must be >= 0")
        for i in self.ops:
            if not 0 <= i < self.seq_len:
                raise ValueError(f"op position {i} outside sequence of length {self.seq_len}")

    def count(self, op: WarpOp) -> int:
        return sum(1 for o in self.ops.values() if o is op)

    def to_json(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "ops": {str(i): op.value for i, op in sorted(self.ops.items())},
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WarpPlan":
        ops = {int(i): WarpOp(name) for i, name in obj["ops"].items()}
        return cls(obj["seq_len"], ops, obj.get("rng_seed", 0))


@dataclass
class WarpedExample:
    """Warped input with labels and prediction flags aligned 1:1 to it."""

    input_ids: list[int]
    label_ids: list[int]
    predict_mask: list[bool]
    original_ids: list[int]
    plan: WarpPlan

    def to_json(self) -> dict:
        return {
            "input_ids": self.input_ids,
            "label_ids": self.label_ids,
            "predict_mask": [bool(b) for b in self.predict_mask],
            "original_ids": self.original_ids,
            "plan": self.plan.to_json(),
        }


def is_legal(plan: WarpPlan) -> bool:
    """True iff no position carries an op right after a DROP and the final
    position is not a DROP."""
    for i, op in plan.ops.items():
        if op is WarpOp.DROP:
            if i == plan.seq_len - 1:
                return False
            if (i + 1) in plan.ops:
                return False
    return True


def repair_plan(plan: WarpPlan) -> WarpPlan:
    """Make a plan legal with one deterministic left-to-right pass.

    The op following a DROP is removed (DROP wins over the later op); a DROP
    at the final position becomes MASK since no successor could carry its
    label. Idempotent.
    """
    ops = dict(plan.ops)
    for i in sorted(ops):
        if ops.get(i) is WarpOp.DROP and (i + 1) in ops:
            del ops[i + 1]
    last = plan.seq_len - 1
    if ops.get(last) is WarpOp.DROP:
        ops[last] = WarpOp.MASK
    return WarpPlan(plan.seq_len, ops, plan.rng_seed)


def sample_raw_plan(seq_len: int, config: WarpConfig, seed: int) -> WarpPlan:
    """Plan as sampled, before legality repair.

    Each position is selected independently with p_select (Bernoulli, not an
    exact count); selected positions draw an op from the configured split.
    """
    if seq_len < 0:
        raise ValueError("seq_len must be >= 0")
    rng = np.random.default_rng(seed)
    ops: dict[int, WarpOp] = {}
    if seq_len == 0 or config.p_select == 0.0:
        return WarpPlan(seq_len, ops, seed)
    selected = np.flatnonzero(rng.random(seq_len) < config.p_select)
    if selected.size:
        cum = np.cumsum([config.proportions.get(op, 0.0) for op in OP_ORDER])
        draws = rng.random(selected.size)
        buckets = np.minimum(np.searchsorted(cum, draws, side="right"), len(OP_ORDER) - 1)
        ops = {int(i): OP_ORDER[int(b)] for i, b in zip(selected, buckets)}
    return WarpPlan(seq_len, ops, seed)


def sample_plan(seq_len: int, config: WarpConfig, seed: int) -> WarpPlan:
    """Sample a plan and repair it; deterministic given the seed."""
    return repair_plan(sample_raw_plan(seq_len, config, seed))


def apply_plan(original_ids, plan: WarpPlan, vocab: Vocab, seed: int) -> WarpedExample:
    """Apply a legal plan, emitting warped positions left to right.

    Random replacement/insertion tokens are drawn uniformly over non-special
    ids (a RAND draw may coincide with the original token).
    """
    original_ids = [int(x) for x in original_ids]
    if plan.seq_len != len(original_ids):
        raise ValueError(
            f"plan length {plan.seq_len} does not match sequence length {len(original_ids)}"
        )
    if not is_legal(plan):
        raise ValueError("illegal warp plan")
    if any(x < N_SPECIALS for x in original_ids):
        raise ValueError("original_ids must not contain special ids")
    vsize = len(vocab)
    rng = np.random.default_rng(seed)

    def random_token() -> int:
        if vsize <= N_SPECIALS:
            raise ValueError("vocab has no non-special tokens to draw from")
        return int(rng.integers(N_SPECIALS, vsize))

    input_ids: list[int] = []
    label_ids: list[int] = []
    predict: list[bool] = []

    def emit(tok: int, label: int, pred: bool) -> None:
        input_ids.append(tok)
        label_ids.append(label)
        predict.append(pred)

    pending: int | None = None  # dropped token waiting to label the next emission
    for i, x in enumerate(original_ids):
        op = plan.ops.get(i)
        if op is WarpOp.INSERT:
            emit(random_token(), INS_ID, True)
            op = None  # the original token at i is emitted unmodified
        if op is WarpOp.DROP:
            pending = x
        elif op is WarpOp.MASK:
            emit(MASK_ID, x, True)
        elif op is WarpOp.KEEP:
            emit(x, x, True)
        elif op is WarpOp.RAND:
            emit(random_token(), x, True)
        elif pending is not None:
            emit(x, pending, True)
            pending = None
        else:
            emit(x, IGNORE_LABEL, False)

    return WarpedExample(input_ids, label_ids, predict, original_ids, plan)


def warp(original_ids, config: WarpConfig, vocab: Vocab, seed: int) -> WarpedExample:
    """Sample a plan for the sequence and apply it."""
    plan = sample_plan(len(original_ids), config, seed)
    return apply_plan(original_ids, plan, vocab, derive_seed(seed, 1))


def render_example(example: WarpedExample, vocab: Vocab) -> str:
    """Aligned text rendering (original / ops / input / label / predict)."""
    inputs = [vocab.id_to_token[t] for t in example.input_ids]
    labels = [
        vocab.id_to_token[l] if p else "."
        for l, p in zip(example.label_ids, example.predict_mask)
    ]
    flags = ["*" if p else "-" for p in example.predict_mask]
    widths = [max(len(a), len(b), 1) for a, b in zip(inputs, labels)]
    rows = [
        ("original", [vocab.id_to_token[t] for t in example.original_ids]),
        ("ops", [f"{i}:{op.value}" for i, op in sorted(example.plan.ops.items())] or ["(none)"]),
        ("input", [s.ljust(w) for s, w in zip(inputs, widths)]),
        ("label", [s.ljust(w) for s, w in zip(labels, widths)]),
        ("predict", [s.ljust(w) for s, w in zip(flags, widths)]),
    ]
    return "\n".join(f"{name:<9} {' '.join(cells).rstrip()}" for name, cells in rows)
