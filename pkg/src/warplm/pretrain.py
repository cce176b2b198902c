"""Pretraining loop: warp sentences, batch them, optimize the encoder.

Determinism contract: with a fixed seed the whole run is reproducible.
Training warps are re-drawn each epoch (seed derived from run seed, epoch,
sentence index); validation warps are drawn once from the run seed and kept
fixed so perplexity is comparable across epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nnet import (
    EncoderModel,
    ModelConfig,
    forward,
    init_adam,
    init_model,
    lm_logits,
    lm_loss,
    lm_loss_and_grads,
    step,
)
from .seeding import derive_seed
from .textcore import PAD_ID, Vocab
from .warp import WarpConfig, WarpedExample, warp

# tags for seed derivation, so distinct purposes use distinct streams
_SEED_INIT = 11
_SEED_SHUFFLE = 12
_SEED_TRAIN_WARP = 13
_SEED_VAL_WARP = 14
_SEED_DROPOUT = 15


def pad_batch(examples: list[WarpedExample], max_len: int):
    """Stack warped examples into (input_ids, pad_mask, label_ids,
    predict_mask), right-padded with PAD and truncated at max_len."""
    if not examples:
        raise ValueError("empty batch")
    T = min(max(len(ex.input_ids) for ex in examples), max_len)
    B = len(examples)
    ids = np.full((B, T), PAD_ID, dtype=np.int64)
    labels = np.full((B, T), PAD_ID, dtype=np.int64)
    pad_mask = np.zeros((B, T), dtype=bool)
    pred_mask = np.zeros((B, T), dtype=bool)
    for i, ex in enumerate(examples):
        n = min(len(ex.input_ids), T)
        ids[i, :n] = ex.input_ids[:n]
        labels[i, :n] = ex.label_ids[:n]
        pad_mask[i, :n] = True
        pred_mask[i, :n] = ex.predict_mask[:n]
    return ids, pad_mask, labels, pred_mask


def _warp_corpus(sentences, warp_cfg, vocab, base_seed, tag):
    return [
        warp(s, warp_cfg, vocab, derive_seed(base_seed, tag, i))
        for i, s in enumerate(sentences)
    ]


def evaluate_lm(
    model: EncoderModel,
    sentences: list[list[int]],
    warp_cfg: WarpConfig,
    vocab: Vocab,
    seed: int,
    batch_size: int = 64,
):
    """Corpus-level (perplexity, accuracy) over all predicted positions,
    under warps drawn deterministically from `seed`."""
    examples = _warp_corpus(sentences, warp_cfg, vocab, seed, _SEED_VAL_WARP)
    total_nll = 0.0
    total_correct = 0.0
    total_pred = 0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo : lo + batch_size]
        ids, pad_mask, labels, pm = pad_batch(chunk, model.config.max_len)
        if not pm.any():
            continue
        hidden, _ = forward(model, ids, pad_mask)
        loss, acc, n_pred = lm_loss(lm_logits(model, hidden), labels, pm)
        total_nll += loss * n_pred
        total_correct += acc * n_pred
        total_pred += n_pred
    if total_pred == 0:
        raise ValueError("no predictions in batch")
    mean_nll = total_nll / total_pred
    return float(math.exp(mean_nll)), float(total_correct / total_pred)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_perplexity: float
    val_accuracy: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_perplexity": self.val_perplexity,
            "val_accuracy": self.val_accuracy,
        }


def pretrain(
    train_sentences: list[list[int]],
    val_sentences: list[list[int]],
    vocab: Vocab,
    model_cfg: ModelConfig,
    warp_cfg: WarpConfig,
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    log=None,
) -> tuple[EncoderModel, list[EpochStats]]:
    """Train from scratch; returns the final model and per-epoch stats.

    Batches that end up with zero predicted positions are skipped. The
    [INS] embedding row is frozen throughout (see nnet.encoder).
    """
    if not train_sentences:
        raise ValueError("empty corpus")
    model = init_model(model_cfg, derive_seed(seed, _SEED_INIT))
    adam = init_adam(model, lr=lr)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        examples = _warp_corpus(
            train_sentences, warp_cfg, vocab, derive_seed(seed, _SEED_TRAIN_WARP, epoch), epoch
        )
        order = np.random.default_rng(
            derive_seed(seed, _SEED_SHUFFLE, epoch)
        ).permutation(len(examples))
        drop_rng = np.random.default_rng(derive_seed(seed, _SEED_DROPOUT, epoch))
        nll_sum, n_pred_sum = 0.0, 0
        for lo in range(0, len(order), batch_size):
            chunk = [examples[j] for j in order[lo : lo + batch_size]]
            ids, pad_mask, labels, pm = pad_batch(chunk, model_cfg.max_len)
            if not pm.any():
                continue
            loss, _, n_pred, grads = lm_loss_and_grads(
                model, ids, pad_mask, labels, pm, dropout_rng=drop_rng
            )
            if not math.isfinite(loss):
                raise FloatingPointError(f"divergence: loss {loss} at epoch {epoch}")
            step(model, grads, adam)
            nll_sum += loss * n_pred
            n_pred_sum += n_pred
        val_ppl, val_acc = evaluate_lm(
            model, val_sentences, warp_cfg, vocab, derive_seed(seed, _SEED_VAL_WARP), batch_size
        )
        row = EpochStats(epoch, nll_sum / max(1, n_pred_sum), val_ppl, val_acc)
        history.append(row)
        if log is not None:
            log(row)
    return model, history
