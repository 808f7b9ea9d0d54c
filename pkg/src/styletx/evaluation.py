"""Model-based evaluation: an independently trained classifier scores
greedy transfers, repeated over seeded runs and aggregated as mean and
population standard deviation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import STYLE_TARGET, CorpusPart, Dataset, SpecError, SplitSpec, Vocab, build_vocab, encode, three_way_split
from .model import (
    SOURCE,
    TARGET,
    ClassifierConfig,
    TextCnnClassifier,
    TransferModel,
    classify_texts,
    pretrain_style_judge,
    transfer_sentences,
)
from .training import TrainConfig, TrainResult, TransferCorpora, train

QUALITY_GATE = 0.8
MAX_SKIPPED_STEPS = 10

SEED_SPLIT_SOURCE, SEED_SPLIT_TARGET, SEED_JUDGE, SEED_EVAL_CLF = 6, 7, 8, 9


class ContaminationError(ValueError):
    """A classifier split shares sentences with another data part."""


def check_disjoint(eval_sentences: Sequence[str], reserved: Sequence[Sequence[str]]) -> None:
    eval_set = set(eval_sentences)
    for other in reserved:
        overlap = eval_set & set(other)
        if overlap:
            sample = sorted(overlap)[:3]
            raise ContaminationError(
                f"{len(overlap)} sentences shared with another split, e.g. {sample}")


def binary_style_data(source: Dataset, target: Dataset, use_style_labels: bool = True):
    """Sentences plus 0/1 labels for classifier training: 1 means the
    sentence carries the target style.

    With ground-truth style labels, source sentences that already have the
    target style count as positives (the mixtures put some there); without
    labels this degrades to domain labels.
    """
    sentences = list(source.sentences) + list(target.sentences)
    if use_style_labels and source.labels is not None:
        src_labels = [1.0 if l == STYLE_TARGET else 0.0 for l in source.labels]
    else:
        src_labels = [0.0] * len(source.sentences)
    return sentences, src_labels + [1.0] * len(target.sentences)


def _classifier_sets(part_s: CorpusPart, part_t: CorpusPart, vocab: Vocab, pad_len: int,
                     use_style_labels: bool):
    train_sents, train_labels = binary_style_data(part_s.train, part_t.train, use_style_labels)
    held_sents, held_labels = binary_style_data(part_s.test, part_t.test, use_style_labels)
    enc = lambda sents: [encode(s, vocab, pad_len) for s in sents]
    return enc(train_sents), train_labels, enc(held_sents), held_labels


def train_part_classifier(part_s: CorpusPart, part_t: CorpusPart, vocab: Vocab,
                          pad_len: int, cfg: ClassifierConfig, seed,
                          use_style_labels: bool = True,
                          reserved: Sequence[Sequence[str]] = ()) -> tuple:
    """Train a frozen style classifier on one data part; refuses to train if
    the part overlaps any reserved split."""
    if not len(part_s.train) or not len(part_t.train):
        raise SpecError("classifier part is empty; adjust the split fractions")
    if reserved:
        check_disjoint(part_s.all_sentences() + part_t.all_sentences(), reserved)
    a, b, c, d = _classifier_sets(part_s, part_t, vocab, pad_len, use_style_labels)
    return pretrain_style_judge(a, b, c, d, len(vocab), cfg, seed)


@dataclass
class TransferScore:
    accuracy: float
    by_style: dict
    transferred: list
    warning: Optional[str] = None


def transfer_accuracy(model: TransferModel, model_vocab: Vocab, clf: TextCnnClassifier,
                      clf_vocab: Vocab, sentences: Sequence[str], pad_len: int,
                      true_styles: Optional[Sequence[str]] = None,
                      clf_heldout_acc: Optional[float] = None) -> TransferScore:
    """Greedy-transfer every sentence and report the fraction the classifier
    labels target-styled, with a per-true-style breakdown when available."""
    if not sentences:
        raise SpecError("transfer accuracy needs a non-empty test set")
    transferred = transfer_sentences(model, model_vocab, sentences, pad_len)
    hits = classify_texts(clf, clf_vocab, transferred, pad_len)
    by_style: dict = {}
    if true_styles is not None:
        for style in sorted(set(true_styles)):
            idx = [i for i, s in enumerate(true_styles) if s == style]
            by_style[style] = float(hits[idx].mean())
    warning = None
    if clf_heldout_acc is not None and clf_heldout_acc < QUALITY_GATE:
        warning = (f"evaluation classifier held-out accuracy {clf_heldout_acc:.3f} "
                   f"is below the {QUALITY_GATE} trust gate")
    return TransferScore(accuracy=float(hits.mean()), by_style=by_style,
                         transferred=transferred, warning=warning)


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    accuracies: list
    seeds: list
    config_fingerprint: str = ""
    failed_runs: list = field(default_factory=list)
    warning: Optional[str] = None
    by_style: dict = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        # population standard deviation over the run accuracies
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")

    def to_csv(self, path) -> None:
        lines = []
        if self.warning:
            lines.append(f"# warning: {self.warning}")
        if self.config_fingerprint:
            lines.append(f"# config: {self.config_fingerprint}")
        for style, acc in sorted(self.by_style.items()):
            lines.append(f"# style {style}: {acc!r}")
        lines.append("run,seed,accuracy")
        for i, (seed, acc) in enumerate(zip(self.seeds, self.accuracies)):
            lines.append(f"{i},{seed},{acc!r}")
        for run, seed in self.failed_runs:
            lines.append(f"{run},{seed},failed")
        lines.append(f"mean,,{self.mean!r}")
        lines.append(f"std,,{self.std!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        accuracies, seeds, failed = [], [], []
        warning, fingerprint, by_style = None, "", {}
        stated_mean = stated_std = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# warning: "):
                warning = line[len("# warning: "):]
            elif line.startswith("# config: "):
                fingerprint = line[len("# config: "):]
            elif line.startswith("# style "):
                name, value = line[len("# style "):].split(": ")
                by_style[name] = float(value)
            elif not line or line.startswith("#") or line.startswith("run,"):
                continue
            else:
                run, seed, value = line.split(",")
                if run == "mean":
                    stated_mean = float(value)
                elif run == "std":
                    stated_std = float(value)
                elif value == "failed":
                    failed.append((int(run), int(seed)))
                else:
                    seeds.append(int(seed))
                    accuracies.append(float(value))
        report = cls(accuracies=accuracies, seeds=seeds, config_fingerprint=fingerprint,
                     failed_runs=failed, warning=warning, by_style=by_style)
        if stated_mean is not None and accuracies and abs(stated_mean - report.mean) > 1e-9:
            raise ValueError(f"{path}: stated mean {stated_mean} != recomputed {report.mean}")
        if stated_std is not None and accuracies and abs(stated_std - report.std) > 1e-9:
            raise ValueError(f"{path}: stated std {stated_std} != recomputed {report.std}")
        return report


def write_sample_dump(path, pairs: Sequence[tuple]) -> None:
    Path(path).write_text("".join(f"{src}\t{out}\n" for src, out in pairs), encoding="utf-8")


# ---------------------------------------------------------------------------
# the full protocol


@dataclass
class ExperimentSetup:
    """Everything that is fixed across the repeated runs: the vocabulary,
    the three-way split, and the two frozen classifiers."""

    vocab: Vocab
    corpora: TransferCorpora
    judge: TextCnnClassifier
    judge_acc: float
    eval_clf: TextCnnClassifier
    eval_acc: float
    source_parts: tuple
    target_parts: tuple


@dataclass
class ExperimentResult:
    report: EvalReport
    setup: ExperimentSetup
    runs: list            # per-run TransferScore
    results: list         # per-run TrainResult


def prepare_experiment(source_sentences: Sequence[str], source_labels: Optional[Sequence[str]],
                       target_sentences: Sequence[str], cfg: TrainConfig,
                       split_spec: Optional[SplitSpec] = None,
                       judge_cfg: Optional[ClassifierConfig] = None,
                       eval_cfg: Optional[ClassifierConfig] = None,
                       use_style_labels: bool = True) -> ExperimentSetup:
    split_spec = split_spec or SplitSpec()
    vocab = build_vocab(list(source_sentences) + list(target_sentences), cfg.min_count)
    src_parts = three_way_split(source_sentences, split_spec, [cfg.seed, SEED_SPLIT_SOURCE],
                                labels=source_labels)
    tgt_parts = three_way_split(target_sentences, split_spec, [cfg.seed, SEED_SPLIT_TARGET])
    judge_cfg = judge_cfg or ClassifierConfig(d_emb=cfg.d_emb)
    eval_cfg = eval_cfg or ClassifierConfig(d_emb=cfg.d_emb)

    judge, judge_acc = train_part_classifier(
        src_parts[1], tgt_parts[1], vocab, cfg.pad_len, judge_cfg,
        seed=[cfg.seed, SEED_JUDGE], use_style_labels=use_style_labels)
    reserved = [src_parts[0].all_sentences() + tgt_parts[0].all_sentences(),
                src_parts[1].all_sentences() + tgt_parts[1].all_sentences()]
    eval_clf, eval_acc = train_part_classifier(
        src_parts[2], tgt_parts[2], vocab, cfg.pad_len, eval_cfg,
        seed=[cfg.seed, SEED_EVAL_CLF], use_style_labels=use_style_labels,
        reserved=reserved)
    corpora = TransferCorpora(vocab=vocab, source=src_parts[0], target=tgt_parts[0])
    return ExperimentSetup(vocab=vocab, corpora=corpora, judge=judge, judge_acc=judge_acc,
                           eval_clf=eval_clf, eval_acc=eval_acc,
                           source_parts=src_parts, target_parts=tgt_parts)


def run_experiment(setup: ExperimentSetup, cfg: TrainConfig, n_runs: int = 3,
                   progress: bool = False) -> ExperimentResult:
    """n_runs independent train+evaluate cycles with seeds seed, seed+1, ...

    Runs tripping the divergence guard are excluded from the aggregate and
    recorded in the report.
    """
    if n_runs < 1:
        raise SpecError(f"n_runs must be at least 1, got {n_runs}")
    accuracies, seeds, failed, scores, results = [], [], [], [], []
    test_sents = setup.corpora.source.test.sentences
    test_styles = setup.corpora.source.test.labels
    for i in range(n_runs):
        run_cfg = replace(cfg, seed=cfg.seed + i)
        result = train(run_cfg, setup.corpora, setup.judge, progress=progress)
        results.append(result)
        diverged = result.skipped_steps > MAX_SKIPPED_STEPS or not np.isfinite(result.best_val)
        if diverged:
            failed.append((i, run_cfg.seed))
            continue
        score = transfer_accuracy(result.model, setup.vocab, setup.eval_clf, setup.vocab,
                                  test_sents, cfg.pad_len, true_styles=test_styles,
                                  clf_heldout_acc=setup.eval_acc)
        scores.append(score)
        seeds.append(run_cfg.seed)
        accuracies.append(score.accuracy)
        if progress:
            print(f"run {i} (seed {run_cfg.seed}): accuracy {score.accuracy:.3f}")
    by_style: dict = {}
    if scores and scores[0].by_style:
        for style in scores[0].by_style:
            by_style[style] = float(np.mean([s.by_style[style] for s in scores]))
    report = EvalReport(accuracies=accuracies, seeds=seeds,
                        config_fingerprint=cfg.fingerprint(), failed_runs=failed,
                        warning=scores[0].warning if scores else None, by_style=by_style)
    return ExperimentResult(report=report, setup=setup, runs=scores, results=results)
