"""Joint intent classification and IOB slot filling on top of the encoder.

A CLS token is prepended to every utterance; the intent head reads the
hidden state at position 0 and the slot head tags every real token. Loss is
intent cross-entropy plus token-mean slot cross-entropy, weighted 1:1.

Dataset file format (one token per line, utterances separated by a blank
line):

    #intent<TAB>LABEL
    token<TAB>TAG
    token<TAB>TAG
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nnet import EncoderModel, encoder_backward, forward, init_adam, load_checkpoint, save_checkpoint, step
from .nnet.encoder import softmax
from .seeding import derive_seed
from .textcore import CLS_ID, PAD_ID, Vocab

OUTSIDE = "O"

_SEED_HEAD_INIT = 21
_SEED_SHUFFLE = 22
_SEED_DROPOUT = 23


@dataclass
class TaggedUtterance:
    token_ids: list[int]
    tags: list[str]
    intent: str

    def __post_init__(self):
        if len(self.token_ids) != len(self.tags):
            raise ValueError(
                f"{len(self.token_ids)} tokens vs {len(self.tags)} tags"
            )
        if not self.token_ids:
            raise ValueError("empty utterance")


# ---------------------------------------------------------------- IOB tags

def iob_is_valid(tags: list[str]) -> bool:
    """Strict IOB2: every I-X continues a B-X/I-X of the same type."""
    prev = OUTSIDE
    for t in tags:
        if t.startswith("I-"):
            if not (prev == "B-" + t[2:] or prev == "I-" + t[2:]):
                return False
        elif t != OUTSIDE and not t.startswith("B-"):
            return False
        prev = t
    return True


def iob_repair(tags: list[str]) -> list[str]:
    """Promote orphan I-X to B-X so the sequence is valid IOB2."""
    out = []
    prev = OUTSIDE
    for t in tags:
        if t.startswith("I-") and prev not in ("B-" + t[2:], "I-" + t[2:]):
            t = "B-" + t[2:]
        out.append(t)
        prev = t
    return out


def iob_spans(tags: list[str]) -> set[tuple[str, int, int]]:
    """(type, start, end) with inclusive indices. Orphan I-X starts a span
    (conlleval behaviour), so repaired and unrepaired sequences agree."""
    spans = set()
    start, typ = None, None
    for i, t in enumerate(tags):
        if t.startswith("B-") or (t.startswith("I-") and typ != t[2:]):
            if start is not None:
                spans.add((typ, start, i - 1))
            start, typ = i, t[2:]
        elif t == OUTSIDE or not t.startswith("I-"):
            if start is not None:
                spans.add((typ, start, i - 1))
            start, typ = None, None
        # else I- of the current type: span continues
    if start is not None:
        spans.add((typ, start, len(tags) - 1))
    return spans


# ------------------------------------------------------------- dataset I/O

def save_slu_file(path, utts: list[TaggedUtterance], vocab: Vocab) -> None:
    lines = []
    for u in utts:
        lines.append(f"#intent\t{u.intent}")
        for tid, tag in zip(u.token_ids, u.tags):
            lines.append(f"{vocab.decode_one(tid)}\t{tag}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def parse_slu_text(text: str, vocab: Vocab) -> list[TaggedUtterance]:
    utts: list[TaggedUtterance] = []
    intent, toks, tags = None, [], []

    def flush(lineno):
        nonlocal intent, toks, tags
        if intent is None and not toks:
            return
        if intent is None:
            raise ValueError(f"line {lineno}: utterance without #intent header")
        if not toks:
            raise ValueError(f"line {lineno}: utterance with no tokens")
        ids = vocab.encode_tokens([vocab.normalize(t) for t in toks])
        utts.append(TaggedUtterance(ids, list(tags), intent))
        intent, toks, tags = None, [], []

    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush(lineno)
            continue
        if line.startswith("#intent\t"):
            if intent is not None:
                raise ValueError(f"line {lineno}: duplicate #intent header")
            intent = line.split("\t", 1)[1].strip()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'token<TAB>tag', got {line!r}")
        toks.append(parts[0])
        tags.append(parts[1])
    flush(lineno if text else 0)
    return utts


def load_slu_file(path, vocab: Vocab) -> list[TaggedUtterance]:
    return parse_slu_text(Path(path).read_text(encoding="utf-8"), vocab)


# ------------------------------------------------------------------ model

@dataclass
class SLUModel:
    encoder: EncoderModel
    intent_labels: list[str]
    tag_labels: list[str]
    head: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.intent_to_id = {s: i for i, s in enumerate(self.intent_labels)}
        self.tag_to_id = {s: i for i, s in enumerate(self.tag_labels)}

    def all_params(self) -> dict[str, np.ndarray]:
        merged = dict(self.encoder.params)
        merged.update({"head." + k: v for k, v in self.head.items()})
        return merged

    def copy(self) -> "SLUModel":
        return SLUModel(
            self.encoder.copy(),
            list(self.intent_labels),
            list(self.tag_labels),
            {k: v.copy() for k, v in self.head.items()},
        )


def label_inventory(utts: list[TaggedUtterance]) -> tuple[list[str], list[str]]:
    intents = sorted({u.intent for u in utts})
    tags = sorted({t for u in utts for t in u.tags} | {OUTSIDE})
    return intents, tags


def init_slu_model(
    encoder: EncoderModel, intent_labels, tag_labels, seed: int = 0
) -> SLUModel:
    rng = np.random.default_rng(derive_seed(seed, _SEED_HEAD_INIT))
    D = encoder.config.d_model
    head = {
        "intent_w": rng.normal(0, 0.02, (D, len(intent_labels))).astype(np.float32),
        "intent_b": np.zeros(len(intent_labels), dtype=np.float32),
        "slot_w": rng.normal(0, 0.02, (D, len(tag_labels))).astype(np.float32),
        "slot_b": np.zeros(len(tag_labels), dtype=np.float32),
    }
    return SLUModel(encoder, list(intent_labels), list(tag_labels), head)


def encode_slu_batch(model: SLUModel, utts: list[TaggedUtterance]):
    """-> (ids [B,L], pad_mask, intent_ids [B], tag_ids [B,L], tag_mask).

    Position 0 is CLS; tag ids are -1 at CLS and padding. Tags or intents
    absent from the model inventory get id -1 (excluded from the loss)."""
    if not utts:
        raise ValueError("empty batch")
    max_len = model.encoder.config.max_len
    L = min(1 + max(len(u.token_ids) for u in utts), max_len)
    B = len(utts)
    ids = np.full((B, L), PAD_ID, dtype=np.int64)
    pad_mask = np.zeros((B, L), dtype=bool)
    intent_ids = np.full(B, -1, dtype=np.int64)
    tag_ids = np.full((B, L), -1, dtype=np.int64)
    ids[:, 0] = CLS_ID
    pad_mask[:, 0] = True
    for i, u in enumerate(utts):
        n = min(len(u.token_ids), L - 1)
        ids[i, 1 : n + 1] = u.token_ids[:n]
        pad_mask[i, 1 : n + 1] = True
        intent_ids[i] = model.intent_to_id.get(u.intent, -1)
        for j in range(n):
            tag_ids[i, 1 + j] = model.tag_to_id.get(u.tags[j], -1)
    return ids, pad_mask, intent_ids, tag_ids, tag_ids >= 0


def slu_forward(
    model: SLUModel,
    ids: np.ndarray,
    pad_mask: np.ndarray,
    dropout_rng=None,
):
    """-> (intent_logits [B,I], slot_logits [B,L,S], encoder cache)."""
    if not np.all(ids[:, 0] == CLS_ID):
        raise ValueError("first position of every sequence must be CLS")
    hidden, cache = forward(model.encoder, ids, pad_mask, dropout_rng)
    intent_logits = hidden[:, 0, :] @ model.head["intent_w"] + model.head["intent_b"]
    slot_logits = hidden @ model.head["slot_w"] + model.head["slot_b"]
    return intent_logits, slot_logits, cache


def _ce_rows(logits, targets, rows_mask):
    """Cross-entropy over rows selected by rows_mask (targets >= 0 there).
    Returns (summed nll, d_logits scaled by 1/n within mask, n)."""
    n = int(rows_mask.sum())
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    safe = np.where(rows_mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    nll = -float(np.sum(picked, where=rows_mask))
    d = np.exp(logp)
    np.put_along_axis(
        d, safe[..., None], np.take_along_axis(d, safe[..., None], axis=-1) - 1.0, axis=-1
    )
    d *= (rows_mask[..., None] / max(1, n)).astype(d.dtype)
    return nll, d, n


def slu_loss_and_grads(model: SLUModel, utts, dropout_rng=None, freeze_encoder=False):
    """Joint loss and gradients over encoder+head params (merged dict)."""
    ids, pad_mask, intent_ids, tag_ids, tag_mask = encode_slu_batch(model, utts)
    if (intent_ids < 0).any():
        bad = [u.intent for u in utts if u.intent not in model.intent_to_id]
        raise ValueError(f"intent label not in model inventory: {bad[0]!r}")
    intent_logits, slot_logits, cache = slu_forward(model, ids, pad_mask, dropout_rng)

    i_nll, d_int, B = _ce_rows(intent_logits, intent_ids, np.ones(len(utts), bool))
    s_nll, d_slot, n_tok = _ce_rows(slot_logits, tag_ids, tag_mask)
    if n_tok == 0:
        raise ValueError("no predictions in batch")
    loss = i_nll / B + s_nll / n_tok

    hidden = cache["hidden"]
    d_hidden = d_slot @ model.head["slot_w"].T
    d_hidden[:, 0, :] += d_int @ model.head["intent_w"].T
    head_grads = {
        "intent_w": hidden[:, 0, :].T @ d_int,
        "intent_b": d_int.sum(axis=0),
        "slot_w": np.tensordot(hidden, d_slot, axes=([0, 1], [0, 1])),
        "slot_b": d_slot.sum(axis=(0, 1)),
    }
    grads = {"head." + k: v for k, v in head_grads.items()}
    if not freeze_encoder:
        grads.update(encoder_backward(model.encoder, cache, d_hidden, freeze_ins=True))
    return float(loss), grads


def slu_predict(
    model: SLUModel, utts: list[TaggedUtterance], batch_size: int = 64
) -> tuple[list[str], list[list[str]]]:
    """Argmax intents and per-token tag sequences (model's inventory)."""
    intents: list[str] = []
    tag_seqs: list[list[str]] = []
    for lo in range(0, len(utts), batch_size):
        chunk = utts[lo : lo + batch_size]
        ids, pad_mask, _, _, _ = encode_slu_batch(model, chunk)
        intent_logits, slot_logits, _ = slu_forward(model, ids, pad_mask)
        best_int = np.argmax(intent_logits, axis=-1)
        best_tag = np.argmax(slot_logits, axis=-1)
        for i, u in enumerate(chunk):
            intents.append(model.intent_labels[best_int[i]])
            n = min(len(u.token_ids), ids.shape[1] - 1)
            seq = [model.tag_labels[best_tag[i, 1 + j]] for j in range(n)]
            # tokens beyond max_len cannot be tagged; pad with O
            seq.extend([OUTSIDE] * (len(u.token_ids) - n))
            tag_seqs.append(seq)
    return intents, tag_seqs


# ---------------------------------------------------------------- metrics

def conll_f1(gold_seqs: list[list[str]], pred_seqs: list[list[str]]):
    """Span-level micro P/R/F1; a span counts only on exact
    (type, start, end) match. No gold and no predicted spans is a perfect
    score; otherwise an empty denominator scores 0."""
    if len(gold_seqs) != len(pred_seqs):
        raise ValueError(f"{len(gold_seqs)} gold vs {len(pred_seqs)} predicted")
    tp = n_pred = n_gold = 0
    for g, p in zip(gold_seqs, pred_seqs):
        if len(g) != len(p):
            raise ValueError(f"length mismatch {len(g)} vs {len(p)}")
        gs, ps = iob_spans(g), iob_spans(p)
        tp += len(gs & ps)
        n_pred += len(ps)
        n_gold += len(gs)
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    prec = tp / n_pred if n_pred else 0.0
    rec = tp / n_gold if n_gold else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def intent_accuracy(gold: list[str], pred: list[str]) -> float:
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise ValueError("empty evaluation set")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def joint_accuracy(gold_intents, pred_intents, gold_tags, pred_tags) -> float:
    """Fraction of utterances with the intent and every token's tag correct
    (exact tag-sequence match, so joint <= both intent and tag accuracy)."""
    if not (len(gold_intents) == len(pred_intents) == len(gold_tags) == len(pred_tags)):
        raise ValueError("mismatched prediction lists")
    if not gold_intents:
        raise ValueError("empty evaluation set")
    ok = 0
    for gi, pi, gt, pt in zip(gold_intents, pred_intents, gold_tags, pred_tags):
        ok += gi == pi and list(gt) == list(pt)
    return ok / len(gold_intents)


@dataclass
class SLUMetrics:
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    joint_accuracy: float

    def to_json(self) -> dict:
        return {
            "intent_accuracy": self.intent_accuracy,
            "slot_precision": self.slot_precision,
            "slot_recall": self.slot_recall,
            "slot_f1": self.slot_f1,
            "joint_accuracy": self.joint_accuracy,
        }


def evaluate_slu(model: SLUModel, utts: list[TaggedUtterance]) -> SLUMetrics:
    pred_intents, pred_tags = slu_predict(model, utts)
    gold_intents = [u.intent for u in utts]
    gold_tags = [u.tags for u in utts]
    p, r, f1 = conll_f1(gold_tags, pred_tags)
    return SLUMetrics(
        intent_accuracy=intent_accuracy(gold_intents, pred_intents),
        slot_precision=p,
        slot_recall=r,
        slot_f1=f1,
        joint_accuracy=joint_accuracy(gold_intents, pred_intents, gold_tags, pred_tags),
    )


# --------------------------------------------------------------- finetune

@dataclass
class FinetuneEpoch:
    epoch: int
    train_loss: float
    intent_accuracy: float
    slot_f1: float
    joint_accuracy: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "intent_accuracy": self.intent_accuracy,
            "slot_f1": self.slot_f1,
            "joint_accuracy": self.joint_accuracy,
        }


def finetune(
    encoder: EncoderModel,
    train_utts: list[TaggedUtterance],
    val_utts: list[TaggedUtterance],
    epochs: int,
    batch_size: int = 16,
    lr: float = 5e-4,
    seed: int = 0,
    freeze_encoder: bool = False,
    log=None,
) -> tuple[SLUModel, list[FinetuneEpoch]]:
    """Fine-tune a (copy of a) pretrained encoder with fresh heads.

    Keeps the parameters from the epoch with the best validation joint
    accuracy (latest epoch wins ties, so equal-joint snapshots prefer the
    most-trained weights)."""
    if not train_utts:
        raise ValueError("empty corpus")
    intents, tags = label_inventory(train_utts + val_utts)
    model = init_slu_model(encoder.copy(), intents, tags, seed)
    trainable = (
        {"head." + k: v for k, v in model.head.items()}
        if freeze_encoder
        else model.all_params()
    )
    adam = init_adam(trainable, lr=lr)
    history: list[FinetuneEpoch] = []
    best = (-1.0, None)
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng(
            derive_seed(seed, _SEED_SHUFFLE, epoch)
        ).permutation(len(train_utts))
        drop_rng = np.random.default_rng(derive_seed(seed, _SEED_DROPOUT, epoch))
        loss_sum, n_batches = 0.0, 0
        for lo in range(0, len(order), batch_size):
            chunk = [train_utts[j] for j in order[lo : lo + batch_size]]
            loss, grads = slu_loss_and_grads(
                model, chunk, dropout_rng=drop_rng, freeze_encoder=freeze_encoder
            )
            if not math.isfinite(loss):
                raise FloatingPointError(f"divergence: loss {loss} at epoch {epoch}")
            step(trainable, {k: grads[k] for k in trainable}, adam)
            loss_sum += loss
            n_batches += 1
        m = evaluate_slu(model, val_utts)
        row = FinetuneEpoch(
            epoch, loss_sum / max(1, n_batches), m.intent_accuracy, m.slot_f1,
            m.joint_accuracy,
        )
        history.append(row)
        if log is not None:
            log(row)
        if m.joint_accuracy >= best[0]:
            best = (m.joint_accuracy, copy.deepcopy(model.all_params()))
    if best[1] is not None:
        snap = best[1]
        for k, v in model.encoder.params.items():
            np.copyto(v, snap[k])
        for k, v in model.head.items():
            np.copyto(v, snap["head." + k])
    return model, history


# ------------------------------------------------------ SLU checkpointing

def save_slu(path, model: SLUModel, vocab_hash: str) -> None:
    header = {
        "kind": "slu",
        "config": model.encoder.config.to_dict(),
        "vocab_hash": vocab_hash,
        "intent_labels": model.intent_labels,
        "tag_labels": model.tag_labels,
    }
    save_checkpoint(path, header, model.all_params())


def load_slu(path, expect_vocab_hash: str | None = None) -> tuple[SLUModel, dict]:
    from .nnet.model import ModelConfig

    header, params = load_checkpoint(path)
    if header.get("kind") != "slu":
        raise ValueError(f"{path}: checkpoint kind {header.get('kind')!r}, expected slu")
    if expect_vocab_hash is not None and header["vocab_hash"] != expect_vocab_hash:
        raise ValueError(
            f"{path}: vocab hash mismatch (checkpoint {header['vocab_hash'][:12]}..., "
            f"current vocab {expect_vocab_hash[:12]}...)"
        )
    enc_params = {k: v for k, v in params.items() if not k.startswith("head.")}
    head = {k[5:]: v for k, v in params.items() if k.startswith("head.")}
    encoder = EncoderModel(ModelConfig.from_dict(header["config"]), enc_params)
    model = SLUModel(encoder, header["intent_labels"], header["tag_labels"], head)
    return model, header
