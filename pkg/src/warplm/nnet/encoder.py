"""Forward and exact backward pass for the tied-embedding encoder.

Shapes: B batch, T sequence, D d_model, H heads, K d_head, F d_ff, V vocab.
All gradients are derived by hand and checked against finite differences in
the test suite; keep forward and backward in lockstep when editing.

`freeze_ins` zeroes the gradient row of the [INS] embedding from both the
input-embedding path and the tied output projection, so that row never moves
during training (Adam with an exactly-zero gradient leaves the weight
bit-identical).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..textcore import INS_ID
from .model import EncoderModel

LN_EPS = 1e-5
NEG_INF = -1e9  # additive score for PAD keys; exp() underflows to exactly 0
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u * _INV_SQRT2))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u * _INV_SQRT2)) + u * np.exp(-0.5 * u * u) * _INV_SQRT2PI


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=(0, 1))
    db = np.sum(dy, axis=(0, 1))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _dropout_mask(rng, shape, rate, dtype):
    # Inverted dropout; None means identity.
    if rng is None or rate <= 0.0:
        return None
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, K = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * K)


def forward(
    model: EncoderModel,
    input_ids: np.ndarray,
    pad_mask: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
):
    """Run the encoder. Returns (hidden [B,T,D], cache for backward).

    pad_mask is True at real positions. PAD key positions receive an
    additive -1e9 attention score, so no real position ever attends to
    padding and pad contents cannot influence non-pad outputs.
    """
    cfg, P = model.config, model.params
    ids = np.asarray(input_ids)
    mask = np.asarray(pad_mask, dtype=bool)
    if ids.ndim != 2:
        raise ValueError(f"input_ids must be 2-d, got shape {ids.shape}")
    if mask.shape != ids.shape:
        raise ValueError(f"pad_mask shape {mask.shape} != input_ids shape {ids.shape}")
    B, T = ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("input id outside vocabulary range")

    dtype = P["tok_emb"].dtype
    scale = dtype.type(1.0 / np.sqrt(cfg.d_head))
    # [B,1,1,T] additive bias over key positions
    att_bias = np.where(mask[:, None, None, :], dtype.type(0.0), dtype.type(NEG_INF))

    e = P["tok_emb"][ids] + P["pos_emb"][:T][None, :, :]
    emb_drop = _dropout_mask(dropout_rng, e.shape, cfg.dropout, dtype)
    h = e if emb_drop is None else e * emb_drop

    layers = []
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        x1, ln1c = _layer_norm(h, P[p + "ln1.g"], P[p + "ln1.b"])
        q = _split_heads(x1 @ P[p + "attn.wq"] + P[p + "attn.bq"], cfg.n_heads)
        k = _split_heads(x1 @ P[p + "attn.wk"] + P[p + "attn.bk"], cfg.n_heads)
        v = _split_heads(x1 @ P[p + "attn.wv"] + P[p + "attn.bv"], cfg.n_heads)
        s = q @ k.transpose(0, 1, 3, 2) * scale + att_bias
        probs = softmax(s, axis=-1)
        ctx = _merge_heads(probs @ v)
        attn = ctx @ P[p + "attn.wo"] + P[p + "attn.bo"]
        attn_drop = _dropout_mask(dropout_rng, attn.shape, cfg.dropout, dtype)
        if attn_drop is not None:
            attn = attn * attn_drop
        h = h + attn

        x2, ln2c = _layer_norm(h, P[p + "ln2.g"], P[p + "ln2.b"])
        u = x2 @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
        a = _gelu(u)
        f = a @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        ffn_drop = _dropout_mask(dropout_rng, f.shape, cfg.dropout, dtype)
        if ffn_drop is not None:
            f = f * ffn_drop
        h = h + f

        layers.append(
            dict(
                x1=x1, ln1c=ln1c, q=q, k=k, v=v, probs=probs, ctx=ctx,
                attn_drop=attn_drop, x2=x2, ln2c=ln2c, u=u, a=a, ffn_drop=ffn_drop,
            )
        )

    hidden, lnfc = _layer_norm(h, P["final_ln.g"], P["final_ln.b"])
    cache = dict(
        ids=ids, mask=mask, emb_drop=emb_drop, layers=layers, lnfc=lnfc,
        hidden=hidden, scale=scale,
    )
    return hidden, cache


def encoder_backward(
    model: EncoderModel,
    cache: dict,
    d_hidden: np.ndarray,
    freeze_ins: bool = True,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every encoder parameter.

    d_hidden is dLoss/d(hidden) from whatever head sits on top. Does not
    include out_bias or the tied-head contribution to tok_emb; lm_backward
    adds those for the LM path.
    """
    cfg, P = model.config, model.params
    ids, mask = cache["ids"], cache["mask"]
    B, T = ids.shape
    D = cfg.d_model
    grads = {name: np.zeros_like(p) for name, p in P.items()}

    dh, dg, db = _layer_norm_backward(d_hidden, P["final_ln.g"], cache["lnfc"])
    grads["final_ln.g"] += dg
    grads["final_ln.b"] += db

    for l in reversed(range(cfg.n_layers)):
        p = f"layers.{l}."
        c = cache["layers"][l]

        # h_out = h_mid + drop(ffn(LN2(h_mid)))
        df = dh if c["ffn_drop"] is None else dh * c["ffn_drop"]
        grads[p + "ffn.b2"] += df.sum(axis=(0, 1))
        grads[p + "ffn.w2"] += np.tensordot(c["a"], df, axes=([0, 1], [0, 1]))
        da = df @ P[p + "ffn.w2"].T
        du = da * _gelu_grad(c["u"])
        grads[p + "ffn.b1"] += du.sum(axis=(0, 1))
        grads[p + "ffn.w1"] += np.tensordot(c["x2"], du, axes=([0, 1], [0, 1]))
        dx2 = du @ P[p + "ffn.w1"].T
        dx, dg, db = _layer_norm_backward(dx2, P[p + "ln2.g"], c["ln2c"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dh = dh + dx

        # h_mid = h_in + drop(attn(LN1(h_in)))
        dattn = dh if c["attn_drop"] is None else dh * c["attn_drop"]
        grads[p + "attn.bo"] += dattn.sum(axis=(0, 1))
        grads[p + "attn.wo"] += np.tensordot(c["ctx"], dattn, axes=([0, 1], [0, 1]))
        dctx = _split_heads(dattn @ P[p + "attn.wo"].T, cfg.n_heads)
        dprobs = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs"].transpose(0, 1, 3, 2) @ dctx
        ds = c["probs"] * (dprobs - np.sum(dprobs * c["probs"], axis=-1, keepdims=True))
        dq = ds @ c["k"] * cache["scale"]
        dk = ds.transpose(0, 1, 3, 2) @ c["q"] * cache["scale"]
        dx1 = np.zeros((B, T, D), dtype=dh.dtype)
        for nm, dz in (("q", dq), ("k", dk), ("v", dv)):
            dzm = _merge_heads(dz)
            grads[p + f"attn.b{nm}"] += dzm.sum(axis=(0, 1))
            grads[p + f"attn.w{nm}"] += np.tensordot(
                c["x1"], dzm, axes=([0, 1], [0, 1])
            )
            dx1 += dzm @ P[p + f"attn.w{nm}"].T
        dx, dg, db = _layer_norm_backward(dx1, P[p + "ln1.g"], c["ln1c"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dh = dh + dx

    de = dh if cache["emb_drop"] is None else dh * cache["emb_drop"]
    grads["pos_emb"][:T] += de.sum(axis=0)
    np.add.at(grads["tok_emb"], ids.reshape(-1), de.reshape(-1, D))

    if freeze_ins:
        grads["tok_emb"][INS_ID] = 0.0
    return grads


def lm_logits(model: EncoderModel, hidden: np.ndarray) -> np.ndarray:
    """Tied output head: hidden @ tok_emb.T + out_bias -> [B,T,V]."""
    return hidden @ model.params["tok_emb"].T + model.params["out_bias"]


def _masked_ce(logits, label_ids, predict_mask):
    """Mean cross-entropy and accuracy over predicted positions, plus
    dLoss/dlogits. Raises if the mask selects nothing."""
    pm = np.asarray(predict_mask, dtype=bool)
    n_pred = int(pm.sum())
    if n_pred == 0:
        raise ValueError("no predictions in batch")
    z = logits - np.max(logits, axis=-1, keepdims=True)
    logsum = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    logp = z - logsum
    labels = np.asarray(label_ids)
    safe = np.where(pm, labels, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -float(np.sum(picked, where=pm) / n_pred)
    acc = float(np.sum((np.argmax(logits, axis=-1) == safe) & pm) / n_pred)

    d = np.exp(logp)
    np.put_along_axis(
        d, safe[..., None], np.take_along_axis(d, safe[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    d *= (pm[..., None] / n_pred).astype(d.dtype)
    return loss, acc, n_pred, d


def lm_loss(logits, label_ids, predict_mask):
    """(mean NLL over predicted positions, accuracy, n_predicted)."""
    loss, acc, n_pred, _ = _masked_ce(logits, label_ids, predict_mask)
    return loss, acc, n_pred


def perplexity(mean_nll: float) -> float:
    return float(np.exp(mean_nll))


def lm_backward(
    model: EncoderModel,
    cache: dict,
    d_logits: np.ndarray,
    freeze_ins: bool = True,
) -> dict[str, np.ndarray]:
    """Backward through the tied head, then the encoder."""
    hidden = cache["hidden"]
    d_hidden = d_logits @ model.params["tok_emb"]
    grads = encoder_backward(model, cache, d_hidden, freeze_ins=False)
    grads["out_bias"] += d_logits.sum(axis=(0, 1))
    grads["tok_emb"] += np.tensordot(d_logits, hidden, axes=([0, 1], [0, 1]))
    if freeze_ins:
        grads["tok_emb"][INS_ID] = 0.0
    return grads


def lm_loss_and_grads(
    model: EncoderModel,
    input_ids: np.ndarray,
    pad_mask: np.ndarray,
    label_ids: np.ndarray,
    predict_mask: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    freeze_ins: bool = True,
):
    """One full LM training step's math: (loss, accuracy, n_pred, grads)."""
    hidden, cache = forward(model, input_ids, pad_mask, dropout_rng)
    logits = lm_logits(model, hidden)
    loss, acc, n_pred, d_logits = _masked_ce(logits, label_ids, predict_mask)
    grads = lm_backward(model, cache, d_logits, freeze_ins=freeze_ins)
    return loss, acc, n_pred, grads
