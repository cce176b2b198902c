"""Command-line entry points.

One tool, subcommands for each stage:

    warplm build-vocab     corpus.txt --out vocab.txt
    warplm pretrain        --corpus corpus.txt --vocab vocab.txt --out enc.ckpt
    warplm warp-preview    --vocab vocab.txt "book a flight to boston"
    warplm corrupt         --data slu.tsv --vocab vocab.txt --out noisy.tsv
    warplm finetune        --checkpoint enc.ckpt --train t.tsv --val v.tsv ...
    warplm evaluate        --checkpoint slu.ckpt --data test.tsv --vocab ...
    warplm experiment      --out runs/exp1
    warplm make-synthetic  --out data/

Hyperparameters may come from a flat KEY=VALUE config file (--config);
explicit flags override file values. Every command is deterministic given
--seed: running it twice writes byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import asrsim, experiment, pretrain as pretrain_mod, slu, synth, textcore, warp
from .nnet import ModelConfig, load_encoder, save_encoder
from .seeding import derive_seed


@dataclass
class RunConfig:
    """Tunable knobs shared by pretrain/finetune; see --help for meanings."""

    objective: str = "wlm"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.1
    p_select: float = 0.15
    val_fraction: float = 0.1
    freeze_encoder: bool = False

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Flat KEY=VALUE lines; '#' starts a comment. Keys must be RunConfig
    fields; values are coerced to the field's type."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = _FIELD_TYPES[key]
        if ftype in ("int", int):
            out[key] = int(value)
        elif ftype in ("float", float):
            out[key] = float(value)
        elif ftype in ("bool", bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"{path}:{lineno}: bad bool {value!r}")
            out[key] = value.lower() in ("true", "1")
        else:
            out[key] = value
    return out


def resolve_run_config(args) -> RunConfig:
    """defaults < config file < explicit flags."""
    cfg = RunConfig()
    file_vals = parse_config_file(args.config) if getattr(args, "config", None) else {}
    flag_vals = {
        k: v for k, v in vars(args).items() if k in _FIELD_TYPES and v is not None
    }
    merged = {**file_vals, **flag_vals}
    bad = [k for k in ("objective",) if merged.get(k) not in (None, "mlm", "wlm")]
    if bad:
        raise ValueError(f"objective must be mlm or wlm, got {merged['objective']!r}")
    return dataclasses.replace(cfg, **merged)


def _add_run_flags(p: argparse.ArgumentParser, model_dims: bool = True):
    p.add_argument("--config", help="flat KEY=VALUE config file")
    p.add_argument("--objective", choices=("mlm", "wlm"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    if model_dims:
        p.add_argument("--d-model", dest="d_model", type=int)
        p.add_argument("--n-layers", dest="n_layers", type=int)
        p.add_argument("--n-heads", dest="n_heads", type=int)
        p.add_argument("--d-ff", dest="d_ff", type=int)
        p.add_argument("--max-len", dest="max_len", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--p-select", dest="p_select", type=float)


def _warp_config(rc: RunConfig) -> warp.WarpConfig:
    base = warp.WarpConfig.for_objective(rc.objective)
    return dataclasses.replace(base, p_select=rc.p_select)


# ------------------------------------------------------------ subcommands

def cmd_build_vocab(args) -> int:
    text = Path(args.corpus).read_text(encoding="utf-8")
    vocab = textcore.build_vocab(
        text, min_count=args.min_count, max_size=args.max_size,
        lowercase=not args.no_lowercase,
    )
    textcore.save_vocab(vocab, args.out)
    print(f"wrote {args.out}: {len(vocab)} tokens ({vocab.n_words} words) "
          f"hash={vocab.content_hash[:12]}")
    return 0


def cmd_pretrain(args) -> int:
    rc = resolve_run_config(args)
    vocab = textcore.load_vocab(args.vocab)
    corpus = textcore.load_corpus(args.corpus, vocab)
    if args.val_corpus:
        val_sents = textcore.load_corpus(args.val_corpus, vocab).sentences
        train_sents = corpus.sentences
    else:
        n_val = max(1, int(len(corpus.sentences) * rc.val_fraction))
        val_sents = corpus.sentences[:n_val]
        train_sents = corpus.sentences[n_val:]
    if not train_sents:
        raise ValueError("empty corpus")
    model_cfg = ModelConfig(
        vocab_size=len(vocab), d_model=rc.d_model, n_layers=rc.n_layers,
        n_heads=rc.n_heads, d_ff=rc.d_ff, max_len=rc.max_len, dropout=rc.dropout,
    )
    log_path = args.log or (args.out + ".log.jsonl")
    rows = []

    def log_row(row):
        rows.append(row)
        print(f"epoch {row.epoch}: train_loss={row.train_loss:.4f} "
              f"val_ppl={row.val_perplexity:.3f} val_acc={row.val_accuracy:.3f}")

    model, _ = pretrain_mod.pretrain(
        train_sents, val_sents, vocab, model_cfg, _warp_config(rc),
        epochs=rc.epochs, batch_size=rc.batch_size, lr=rc.lr, seed=rc.seed,
        log=log_row,
    )
    with open(log_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
    save_encoder(args.out, model, vocab.content_hash,
                 extra={"objective": rc.objective})
    Path(args.out + ".runconfig.json").write_text(
        json.dumps(rc.to_json(), sort_keys=True, indent=1), encoding="utf-8"
    )
    print(f"wrote {args.out} ({rc.objective}, {rc.epochs} epochs)")
    return 0


def cmd_warp_preview(args) -> int:
    rc = resolve_run_config(args)
    vocab = textcore.load_vocab(args.vocab)
    text = args.sentence if args.sentence is not None else sys.stdin.read()
    ids = vocab.encode(text)
    ids = [textcore.UNK_ID if i < textcore.N_SPECIALS else i for i in ids]
    if not ids:
        raise ValueError("empty sentence")
    ex = warp.warp(ids, _warp_config(rc), vocab, rc.seed)
    print(warp.render_example(ex, vocab))
    return 0


def cmd_corrupt(args) -> int:
    vocab = textcore.load_vocab(args.vocab)
    utts = slu.load_slu_file(args.data, vocab)
    if args.rates:
        noise = {"train_val": asrsim.NoiseConfig.train_val,
                 "test": asrsim.NoiseConfig.test,
                 "clean": asrsim.NoiseConfig.clean}[args.rates]()
    else:
        noise = asrsim.NoiseConfig(p_sub=args.p_sub, p_del=args.p_del,
                                   p_ins=args.p_ins)
    noisy, sidecar, stats = asrsim.make_noisy_slu_set(utts, noise, vocab, args.seed)
    slu.save_slu_file(args.out, noisy, vocab)
    with open(args.out + ".align.json", "w") as fh:
        json.dump({"meta": sidecar[0], "wer": stats.wer, "utterances": sidecar[1:]},
                  fh, sort_keys=True, indent=1)
    print(f"wrote {args.out}: {len(noisy)} utterances wer={stats.wer:.4f} "
          f"fully_deleted={sidecar[0]['n_fully_deleted']}")
    return 0


def cmd_finetune(args) -> int:
    rc = resolve_run_config(args)
    vocab = textcore.load_vocab(args.vocab)
    encoder, _ = load_encoder(args.checkpoint, expect_vocab_hash=vocab.content_hash)
    train = slu.load_slu_file(args.train, vocab)
    val = slu.load_slu_file(args.val, vocab)
    rows = []

    def log_row(row):
        rows.append(row)
        print(f"epoch {row.epoch}: loss={row.train_loss:.4f} "
              f"intent={row.intent_accuracy:.3f} slot_f1={row.slot_f1:.3f} "
              f"joint={row.joint_accuracy:.3f}")

    model, _ = slu.finetune(
        encoder, train, val, epochs=rc.epochs, batch_size=rc.batch_size,
        lr=rc.lr, seed=rc.seed, freeze_encoder=rc.freeze_encoder, log=log_row,
    )
    log_path = args.log or (args.out + ".log.jsonl")
    with open(log_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
    slu.save_slu(args.out, model, vocab.content_hash)
    Path(args.out + ".runconfig.json").write_text(
        json.dumps(rc.to_json(), sort_keys=True, indent=1), encoding="utf-8"
    )
    best = max(rows, key=lambda r: r.joint_accuracy)
    print(f"wrote {args.out} (best val joint={best.joint_accuracy:.3f} "
          f"at epoch {best.epoch})")
    return 0


def cmd_evaluate(args) -> int:
    vocab = textcore.load_vocab(args.vocab)
    model, _ = slu.load_slu(args.checkpoint, expect_vocab_hash=vocab.content_hash)
    utts = slu.load_slu_file(args.data, vocab)
    m = slu.evaluate_slu(model, utts)
    if args.out:
        Path(args.out).write_text(
            json.dumps(m.to_json(), sort_keys=True, indent=1), encoding="utf-8"
        )
    print(f"intent_acc={m.intent_accuracy:.4f} slot_p={m.slot_precision:.4f} "
          f"slot_r={m.slot_recall:.4f} slot_f1={m.slot_f1:.4f} "
          f"joint_acc={m.joint_accuracy:.4f}")
    return 0


def cmd_experiment(args) -> int:
    matrix = experiment.ExperimentMatrix(
        settings=tuple(args.settings.split(",")),
        objectives=tuple(args.objectives.split(",")),
        seeds=tuple(range(args.n_seeds)),
    )
    experiment.run_experiment(
        args.out, matrix,
        n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        n_corpus=args.n_corpus, pretrain_epochs=args.pretrain_epochs,
        finetune_epochs=args.finetune_epochs, seed=args.seed or 0,
    )
    print(f"wrote {args.out}/report.txt")
    return 0


def cmd_make_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = synth.synth_vocab()
    textcore.save_vocab(vocab, out / "vocab.txt")
    (out / "corpus.txt").write_text(
        synth.synth_corpus_text(args.n_corpus, args.seed or 0), encoding="utf-8"
    )
    train, val, test = synth.synth_slu_splits(
        args.n_train, args.n_val, args.n_test, vocab, derive_seed(args.seed or 0, 2)
    )
    for name, utts in (("train", train), ("val", val), ("test", test)):
        slu.save_slu_file(out / f"slu_{name}.tsv", utts, vocab)
    print(f"wrote {out}: vocab={len(vocab)} corpus={args.n_corpus} "
          f"slu={args.n_train}/{args.n_val}/{args.n_test}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="warplm", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocab file from a corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-size", type=int, default=50000)
    p.add_argument("--no-lowercase", action="store_true")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="pretrain an encoder with mlm or wlm warps")
    p.add_argument("--corpus", required=True)
    p.add_argument("--val-corpus", dest="val_corpus")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="epoch stats JSON-lines path")
    _add_run_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("warp-preview", help="show the warped form of a sentence")
    p.add_argument("sentence", nargs="?", help="text; stdin when omitted")
    p.add_argument("--vocab", required=True)
    _add_run_flags(p, model_dims=True)
    p.set_defaults(func=cmd_warp_preview)

    p = sub.add_parser("corrupt", help="make a noisy copy of a tagged dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rates", choices=("train_val", "test", "clean"),
                   help="preset noise rates")
    p.add_argument("--p-sub", dest="p_sub", type=float, default=0.0)
    p.add_argument("--p-del", dest="p_del", type=float, default=0.0)
    p.add_argument("--p-ins", dest="p_ins", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("finetune", help="fine-tune a pretrained encoder on SLU data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--freeze-encoder", dest="freeze_encoder",
                   action="store_const", const=True)
    _add_run_flags(p, model_dims=False)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate an SLU checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", help="optional metrics JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the full noise x objective matrix")
    p.add_argument("--out", required=True)
    p.add_argument("--settings", default=",".join(experiment.SETTINGS))
    p.add_argument("--objectives", default=",".join(experiment.OBJECTIVES))
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=5)
    p.add_argument("--n-train", dest="n_train", type=int, default=400)
    p.add_argument("--n-val", dest="n_val", type=int, default=100)
    p.add_argument("--n-test", dest="n_test", type=int, default=200)
    p.add_argument("--n-corpus", dest="n_corpus", type=int, default=2000)
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int, default=8)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("make-synthetic", help="write the synthetic corpus and SLU splits")
    p.add_argument("--out", required=True)
    p.add_argument("--n-corpus", dest="n_corpus", type=int, default=2000)
    p.add_argument("--n-train", dest="n_train", type=int, default=4478)
    p.add_argument("--n-val", dest="n_val", type=int, default=500)
    p.add_argument("--n-test", dest="n_test", type=int, default=893)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
