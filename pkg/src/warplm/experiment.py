"""Noise-robustness experiment matrix.

Settings name the (fine-tune data, test data) pairing:
    clean-clean   fine-tune on clean text, test on clean text
    clean-noisy   fine-tune on clean text, test on noisy text
    noisy-noisy   fine-tune on noisy text, test on noisy text

For each setting, both pretraining objectives (masked-only "mlm" vs the
full warp op set "wlm") are fine-tuned over several seeds; per-metric means
and standard deviations are reported with an exact two-sided permutation
test between the two objectives.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asrsim import NoiseConfig, make_noisy_slu_set
from .nnet import EncoderModel, ModelConfig
from .pretrain import pretrain
from .seeding import derive_seed
from .slu import TaggedUtterance, evaluate_slu, finetune, save_slu_file
from .synth import synth_corpus_text, synth_slu_splits, synth_vocab
from .textcore import Vocab, corpus_from_text, save_vocab
from .warp import WarpConfig

SETTINGS = ("clean-clean", "clean-noisy", "noisy-noisy")
OBJECTIVES = ("wlm", "mlm")
METRICS = ("intent_accuracy", "slot_f1", "joint_accuracy")


@dataclass(frozen=True)
class ExperimentMatrix:
    settings: tuple[str, ...] = SETTINGS
    objectives: tuple[str, ...] = OBJECTIVES
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        for s in self.settings:
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {s!r} (choose from {SETTINGS})")
        for o in self.objectives:
            if o not in OBJECTIVES:
                raise ValueError(f"unknown objective {o!r}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be non-empty and distinct")


def permutation_test(xs, ys, max_exact: int = 20000, seed: int = 0) -> float:
    """Two-sided permutation test on the difference of means.

    Exact when the number of splits C(n+m, n) is small enough, otherwise
    Monte Carlo with 10000 resamples. The observed split counts toward the
    p-value, so p is never 0."""
    xs, ys = list(map(float, xs)), list(map(float, ys))
    pool = np.array(xs + ys)
    n = len(xs)
    obs = abs(np.mean(xs) - np.mean(ys))
    total = math.comb(len(pool), n)
    tol = 1e-12  # treat FP-equal statistics as ties
    if total <= max_exact:
        hits = 0
        for idx in itertools.combinations(range(len(pool)), n):
            sel = np.zeros(len(pool), bool)
            sel[list(idx)] = True
            stat = abs(pool[sel].mean() - pool[~sel].mean())
            hits += stat >= obs - tol
        return hits / total
    rng = np.random.default_rng(derive_seed(seed, 0x9E))
    hits = 1  # the observed labeling
    draws = 10000
    for _ in range(draws):
        perm = rng.permutation(len(pool))
        stat = abs(pool[perm[:n]].mean() - pool[perm[n:]].mean())
        hits += stat >= obs - tol
    return hits / (draws + 1)


@dataclass
class RunRecord:
    objective: str
    setting: str
    seed: int
    intent_accuracy: float
    slot_f1: float
    joint_accuracy: float

    def to_json(self) -> dict:
        return {
            "objective": self.objective, "setting": self.setting, "seed": self.seed,
            "intent_accuracy": self.intent_accuracy, "slot_f1": self.slot_f1,
            "joint_accuracy": self.joint_accuracy,
        }


@dataclass
class ExperimentReport:
    records: list[RunRecord]
    summary: dict  # setting -> objective -> metric -> {"mean","std"}
    p_values: dict  # setting -> metric -> p
    alpha: float = 0.05
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "records": [r.to_json() for r in self.records],
            "summary": self.summary,
            "p_values": self.p_values,
            "alpha": self.alpha,
            "meta": self.meta,
        }


def summarize(records: list[RunRecord], matrix: ExperimentMatrix, alpha: float = 0.05,
              ddof: int = 1) -> ExperimentReport:
    summary: dict = {}
    p_values: dict = {}
    by_key: dict = {}
    for r in records:
        by_key.setdefault((r.setting, r.objective), []).append(r)
    for setting in matrix.settings:
        summary[setting] = {}
        for obj in matrix.objectives:
            runs = sorted(by_key.get((setting, obj), []), key=lambda r: r.seed)
            summary[setting][obj] = {
                m: {
                    "mean": float(np.mean([getattr(r, m) for r in runs])),
                    "std": float(np.std([getattr(r, m) for r in runs], ddof=ddof))
                    if len(runs) > 1 else 0.0,
                }
                for m in METRICS
            }
        if set(matrix.objectives) >= {"wlm", "mlm"}:
            p_values[setting] = {}
            for m in METRICS:
                xs = [getattr(r, m) for r in by_key.get((setting, "wlm"), [])]
                ys = [getattr(r, m) for r in by_key.get((setting, "mlm"), [])]
                p_values[setting][m] = permutation_test(xs, ys)
    return ExperimentReport(records, summary, p_values, alpha)


def render_table(report: ExperimentReport, matrix: ExperimentMatrix) -> str:
    """Fixed-width summary; '*' marks a significant difference (p < alpha)
    on that metric, attached to the higher mean."""
    col_names = {"intent_accuracy": "intent", "slot_f1": "slot_f1",
                 "joint_accuracy": "joint"}
    lines = []
    head = f"{'':14s}"
    for setting in matrix.settings:
        head += f"{setting:^42s}"
    lines.append(head.rstrip())
    sub = f"{'objective':14s}"
    for _ in matrix.settings:
        for m in METRICS:
            sub += f"{col_names[m]:>14s}"
    lines.append(sub.rstrip())
    for obj in matrix.objectives:
        row = f"{obj:14s}"
        for setting in matrix.settings:
            for m in METRICS:
                cell = report.summary[setting][obj][m]
                mark = ""
                p = report.p_values.get(setting, {}).get(m)
                if p is not None and p < report.alpha:
                    other = "mlm" if obj == "wlm" else "wlm"
                    if cell["mean"] > report.summary[setting][other][m]["mean"]:
                        mark = "*"
                text = f"{cell['mean']:.3f}±{cell['std']:.3f}{mark}"
                row += f"{text:>14s}"
        lines.append(row.rstrip())
    plines = []
    for setting in matrix.settings:
        if setting in report.p_values:
            ps = report.p_values[setting]
            plines.append(
                f"p({setting}): "
                + "  ".join(f"{col_names[m]}={ps[m]:.4f}" for m in METRICS)
            )
    if plines:
        lines.append("")
        lines.extend(plines)
        lines.append(f"'*' = higher mean, two-sided permutation p < {report.alpha}")
    return "\n".join(lines) + "\n"


def run_experiment(
    out_dir,
    matrix: ExperimentMatrix = ExperimentMatrix(),
    n_train: int = 400,
    n_val: int = 100,
    n_test: int = 200,
    n_corpus: int = 2000,
    pretrain_epochs: int = 8,
    finetune_epochs: int = 6,
    model_cfg: ModelConfig | None = None,
    seed: int = 0,
    log=print,
) -> ExperimentReport:
    """Generate data, pretrain one encoder per objective, fine-tune over the
    matrix, evaluate, test significance, and write all artifacts under
    out_dir. Everything is a pure function of the arguments."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = synth_vocab()
    if model_cfg is None:
        model_cfg = ModelConfig.desk(len(vocab))
    save_vocab(vocab, out / "vocab.txt")

    corpus_text = synth_corpus_text(n_corpus, derive_seed(seed, 1))
    (out / "corpus.txt").write_text(corpus_text, encoding="utf-8")
    corpus = corpus_from_text(corpus_text, vocab)
    n_val_corpus = max(1, len(corpus.sentences) // 10)
    train_sents = corpus.sentences[n_val_corpus:]
    val_sents = corpus.sentences[:n_val_corpus]

    train, val, test = synth_slu_splits(n_train, n_val, n_test, vocab, derive_seed(seed, 2))
    save_slu_file(out / "slu_train.tsv", train, vocab)
    save_slu_file(out / "slu_val.tsv", val, vocab)
    save_slu_file(out / "slu_test.tsv", test, vocab)

    noisy_sets = {}
    for name, utts, cfg_noise, tag in (
        ("train", train, NoiseConfig.train_val(), 3),
        ("val", val, NoiseConfig.train_val(), 4),
        ("test", test, NoiseConfig.test(), 5),
    ):
        noisy, sidecar, stats = make_noisy_slu_set(
            utts, cfg_noise, vocab, derive_seed(seed, tag)
        )
        noisy_sets[name] = noisy
        save_slu_file(out / f"slu_{name}_noisy.tsv", noisy, vocab)
        with open(out / f"slu_{name}_noisy.align.json", "w") as fh:
            json.dump({"meta": sidecar[0], "wer": stats.wer, "utterances": sidecar[1:]},
                      fh, sort_keys=True, indent=1)

    encoders: dict[str, EncoderModel] = {}
    for obj in matrix.objectives:
        if log:
            log(f"pretraining objective={obj} ({pretrain_epochs} epochs)")
        model, history = pretrain(
            train_sents, val_sents, vocab, model_cfg,
            WarpConfig.for_objective(obj),
            epochs=pretrain_epochs, batch_size=32, lr=1e-3,
            seed=derive_seed(seed, 6),
        )
        encoders[obj] = model
        with open(out / f"pretrain_{obj}.jsonl", "w") as fh:
            for row in history:
                fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")

    records: list[RunRecord] = []
    for setting in matrix.settings:
        ft_train = train if setting.startswith("clean") else noisy_sets["train"]
        ft_val = val if setting.startswith("clean") else noisy_sets["val"]
        ev_test = test if setting.endswith("clean") else noisy_sets["test"]
        for obj in matrix.objectives:
            for s in matrix.seeds:
                model, _ = finetune(
                    encoders[obj], ft_train, ft_val,
                    epochs=finetune_epochs, batch_size=16, lr=5e-4,
                    seed=derive_seed(seed, 7, s),
                )
                m = evaluate_slu(model, ev_test)
                rec = RunRecord(obj, setting, s, m.intent_accuracy, m.slot_f1,
                                m.joint_accuracy)
                records.append(rec)
                if log:
                    log(f"{setting} {obj} seed={s} intent={m.intent_accuracy:.3f} "
                        f"slot_f1={m.slot_f1:.3f} joint={m.joint_accuracy:.3f}")

    report = summarize(records, matrix)
    report.meta = {
        "n_train": n_train, "n_val": n_val, "n_test": n_test,
        "n_corpus": n_corpus, "pretrain_epochs": pretrain_epochs,
        "finetune_epochs": finetune_epochs, "seed": seed,
        "model": model_cfg.to_dict(),
    }
    with open(out / "results.jsonl", "w") as fh:
        for rec in sorted(records, key=lambda r: (r.setting, r.objective, r.seed)):
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    (out / "report.json").write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=1), encoding="utf-8"
    )
    table = render_table(report, matrix)
    (out / "report.txt").write_text(table, encoding="utf-8")
    if log:
        log(table)
    return report
