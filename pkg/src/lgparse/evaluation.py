"""PARSEVAL scoring, tagging accuracy, and the cross-validation driver.

Scoring follows labeled-bracketing precision/recall/F over (label, start,
end) constituents, micro-averaged over all scored sentences.  Sentences
longer than the length bound are excluded from every tally; punctuation
can be kept (default) or removed from span indexing.  The root constituent
counts; duplicated same-label roots are collapsed first.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, asdict

from . import annotate as annotate_mod
from . import cky
from .grammar import train_latent
from .treebank import Treebank, collect_tagset, split_folds, subset

DEFAULT_MAX_LEN = 40
DEFAULT_PUNCT_PREFIXES = ("PONCT",)


class EvalError(Exception):
    pass


class LeafMismatch(EvalError):
    def __init__(self, index, detail=""):
        super().__init__("sentence %d: leaf sequences differ%s"
                         % (index, ": " + detail if detail else ""))
        self.index = index


@dataclass
class ParsevalScore:
    n_gold: int
    n_pred: int
    n_match: int
    precision: float
    recall: float
    f1: float
    tagging_accuracy: float
    n_sentences_scored: int
    n_excluded_by_length: int


@dataclass
class TrainConfig:
    """Hyperparameters of one grammar training run."""

    rounds: int = 1
    em_iters: int = 2
    noise: float = 0.01
    seed: int = 0
    rare_threshold: int = 5
    h_markov: int = 2
    v_markov: int = 1


@dataclass
class EvalConfig:
    max_len: int = DEFAULT_MAX_LEN
    include_punct: bool = True
    punct_prefixes: tuple = DEFAULT_PUNCT_PREFIXES


@dataclass
class FoldResult:
    fold: int
    score: ParsevalScore
    n_fallbacks: int
    final_log_likelihood: float


@dataclass
class ExperimentReport:
    """Cross-validation outcome in the shape of the result tables."""

    strategies: list
    p: int
    fold_seed: int
    train: TrainConfig
    eval: EvalConfig
    tagset_size: int
    coverage_pct: float
    coverage_forms: int
    folds: list = field(default_factory=list)
    mean_f1: float = 0.0
    mean_tagging: float = 0.0
    n_fallbacks: int = 0
    baseline_mean_f1: float | None = None
    gain_mean_f1: float | None = None
    gains_per_fold: list | None = None

    def finalize(self, baseline=None):
        if self.folds:
            self.mean_f1 = sum(f.score.f1 for f in self.folds) / len(self.folds)
            self.mean_tagging = (sum(f.score.tagging_accuracy for f in self.folds)
                                 / len(self.folds))
            self.n_fallbacks = sum(f.n_fallbacks for f in self.folds)
        if baseline is not None:
            self.baseline_mean_f1 = baseline.mean_f1
            self.gain_mean_f1 = self.mean_f1 - baseline.mean_f1
            base_folds = [f.score.f1 for f in baseline.folds]
            if len(base_folds) == len(self.folds):
                self.gains_per_fold = [f.score.f1 - b
                                       for f, b in zip(self.folds, base_folds)]

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d):
        report = cls(
            strategies=d["strategies"], p=d["p"], fold_seed=d["fold_seed"],
            train=TrainConfig(**d["train"]),
            eval=EvalConfig(**{**d["eval"],
                               "punct_prefixes": tuple(d["eval"]["punct_prefixes"])}),
            tagset_size=d["tagset_size"], coverage_pct=d["coverage_pct"],
            coverage_forms=d["coverage_forms"],
            folds=[FoldResult(fold=f["fold"], score=ParsevalScore(**f["score"]),
                              n_fallbacks=f["n_fallbacks"],
                              final_log_likelihood=f["final_log_likelihood"])
                   for f in d["folds"]],
        )
        report.finalize()
        report.baseline_mean_f1 = d.get("baseline_mean_f1")
        report.gain_mean_f1 = d.get("gain_mean_f1")
        report.gains_per_fold = d.get("gains_per_fold")
        return report

    def to_text(self):
        """Aligned result table followed by the per-fold breakdown."""
        method = "+".join(self.strategies) if self.strategies else "Baseline"
        level = amb = "-"
        for spec in self.strategies:
            kv = dict(item.split("=", 1) for item in spec.split())
            if "level" in kv:
                level = kv["level"]
            if "max_amb" in kv:
                amb = kv["max_amb"]
        gain = ("%+.2f" % self.gain_mean_f1) if self.gain_mean_f1 is not None else ""
        header = ["Méthode", "Niv./Amb.", "Tagset", "% annotés",
                  "F-mesure/Etiquetage", "Gains absolus (F-mesure)"]
        row = [method, "%s/%s" % (level, amb), str(self.tagset_size),
               "%.1f%%" % self.coverage_pct,
               "%.2f/%.2f" % (self.mean_f1, self.mean_tagging), gain]
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
                 "  ".join(r.ljust(w) for r, w in zip(row, widths)), ""]
        lines.append("fold  F-mesure  Etiquetage  scored  excluded  fallbacks  gain")
        for k, f in enumerate(self.folds):
            g = ("%+.2f" % self.gains_per_fold[k]) if self.gains_per_fold else ""
            lines.append("%4d  %8.2f  %10.2f  %6d  %8d  %9d  %s"
                         % (f.fold, f.score.f1, f.score.tagging_accuracy,
                            f.score.n_sentences_scored,
                            f.score.n_excluded_by_length, f.n_fallbacks, g))
        lines.append("")
        t = self.train
        lines.append("p=%d fold_seed=%s rounds=%d em_iters=%d noise=%g seed=%d "
                     "rare=%d h_markov=%d v_markov=%d max_len=%d punct=%s"
                     % (self.p, self.fold_seed, t.rounds, t.em_iters, t.noise,
                        t.seed, t.rare_threshold, t.h_markov, t.v_markov,
                        self.eval.max_len,
                        "include" if self.eval.include_punct else "exclude"))
        return "\n".join(lines) + "\n"


def _is_punct(tag, prefixes):
    return any(tag.startswith(p) for p in prefixes)


def _normalize_root(tree):
    # collapse (X (X ...)) duplicate roots introduced by wrapper conventions
    while (len(tree.children) == 1 and not tree.is_preterminal
           and tree.children[0].label == tree.label):
        tree = tree.children[0]
    return tree


def _constituents(tree, keep_mask):
    """Multiset of (label, start, end) spans over kept token positions."""
    spans = Counter()
    remap = []
    pos = 0
    for kept in keep_mask:
        remap.append(pos)
        if kept:
            pos += 1
    remap.append(pos)

    def walk(node, start):
        if node.is_preterminal:
            return start + 1
        end = start
        for child in node.children:
            end = walk(child, end)
        lo, hi = remap[start], remap[end]
        if hi > lo:
            spans[(node.label, lo, hi)] += 1
        return end

    walk(_normalize_root(tree), 0)
    return spans


def _tag_sequence(tree):
    return [pt.label for pt in tree.preterminals()]


def _surfaces(tree):
    return [leaf.surface for leaf in tree.leaves()]


def parseval(gold, pred, max_len=DEFAULT_MAX_LEN, include_punct=True,
             punct_prefixes=DEFAULT_PUNCT_PREFIXES):
    """Labeled-bracketing score of a predicted bank against gold.

    Banks must be aligned one to one with identical token sequences.
    Sentences with more than max_len tokens are excluded entirely.  With
    include_punct=False, tokens whose gold tag is a punctuation tag are
    dropped from span indexing in both banks.
    """
    if len(gold) != len(pred):
        raise EvalError("bank sizes differ: %d vs %d" % (len(gold), len(pred)))
    n_gold = n_pred = n_match = 0
    tags_total = tags_correct = 0
    scored = excluded = 0
    for idx, (g_tree, p_tree) in enumerate(zip(gold, pred)):
        g_surf, p_surf = _surfaces(g_tree), _surfaces(p_tree)
        if g_surf != p_surf:
            raise LeafMismatch(idx)
        if len(g_surf) > max_len:
            excluded += 1
            continue
        scored += 1
        g_tags = _tag_sequence(g_tree)
        p_tags = _tag_sequence(p_tree)
        if include_punct:
            keep = [True] * len(g_surf)
        else:
            keep = [not _is_punct(t, punct_prefixes) for t in g_tags]
        g_spans = _constituents(g_tree, keep)
        p_spans = _constituents(p_tree, keep)
        n_gold += sum(g_spans.values())
        n_pred += sum(p_spans.values())
        n_match += sum((g_spans & p_spans).values())
        for k, (gt, pt) in enumerate(zip(g_tags, p_tags)):
            if keep[k]:
                tags_total += 1
                tags_correct += gt == pt
    precision = 100.0 * n_match / n_pred if n_pred else 0.0
    recall = 100.0 * n_match / n_gold if n_gold else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    tagging = 100.0 * tags_correct / tags_total if tags_total else 0.0
    return ParsevalScore(n_gold, n_pred, n_match, precision, recall, f1,
                         tagging, scored, excluded)


def tagging_accuracy(gold, pred):
    """Percentage of tokens whose pre-terminal label matches exactly."""
    if len(gold) != len(pred):
        raise EvalError("bank sizes differ: %d vs %d" % (len(gold), len(pred)))
    total = correct = 0
    for idx, (g_tree, p_tree) in enumerate(zip(gold, pred)):
        if _surfaces(g_tree) != _surfaces(p_tree):
            raise LeafMismatch(idx)
        for gt, pt in zip(_tag_sequence(g_tree), _tag_sequence(p_tree)):
            total += 1
            correct += gt == pt
    return 100.0 * correct / total if total else 0.0


def apply_plan(tb, plan):
    """Run a sequence of (StrategyConfig, Lexicon, Hierarchy) annotations."""
    seen_targets = set()
    for cfg, _, _ in plan:
        overlap = seen_targets & cfg.target_tags
        if overlap:
            raise annotate_mod.OverlappingTargets(
                "target tags shared across strategies: %s"
                % ", ".join(sorted(overlap)))
        seen_targets |= cfg.target_tags
    out = tb
    for cfg, lex, hierarchy in plan:
        out = annotate_mod.annotate(out, lex, hierarchy, cfg)
    return out


def cross_validate(tb, plan=(), train_cfg=None, eval_cfg=None, p=10, seed=0,
                   baseline=None, jobs=1):
    """p-fold cross-validation of an annotation strategy.

    For each fold: annotate the full bank, train on the other folds, parse
    the held-out sentences from their gold tokens and lemmas, strip the
    annotations from the predictions, and score against the unannotated
    gold.  `plan` is a list of (StrategyConfig, Lexicon, Hierarchy) triples;
    an empty plan is the baseline.
    """
    train_cfg = train_cfg or TrainConfig()
    eval_cfg = eval_cfg or EvalConfig()
    base_tags = collect_tagset(tb)
    annotated = apply_plan(tb, list(plan))
    if plan:
        targets = set().union(*(cfg.target_tags for cfg, _, _ in plan))
        cov = annotate_mod.coverage(tb, annotated, targets)
    else:
        cov = annotate_mod.CoverageReport(0, 0, 0.0, len(base_tags))
    folds = split_folds(tb, p, seed)
    report = ExperimentReport(
        strategies=[cfg.to_kv() for cfg, _, _ in plan], p=p, fold_seed=seed,
        train=train_cfg, eval=eval_cfg, tagset_size=cov.tagset_size_after,
        coverage_pct=cov.pct_annotated, coverage_forms=cov.n_annotated_forms)

    for k in range(p):
        train_bank = subset(annotated, folds.complement_indices(k))
        test_idx = folds.fold_indices(k)
        gold_bank = subset(tb, test_idx)
        g, records = train_latent(
            train_bank, rounds=train_cfg.rounds, em_iters=train_cfg.em_iters,
            noise=train_cfg.noise, seed=train_cfg.seed,
            rare_threshold=train_cfg.rare_threshold,
            h_markov=train_cfg.h_markov, v_markov=train_cfg.v_markov)
        token_lists = [t.tokens() for t in gold_bank]
        parsed = cky.parse_many(g, token_lists, jobs=jobs)
        fallbacks = 0
        preds = []
        for tokens, tree in zip(token_lists, parsed):
            if tree is None:
                fallbacks += 1
                tree = cky.fallback_tree(g, tokens)
            preds.append(tree)
        pred_bank = annotate_mod.strip(Treebank(preds), base_tags)
        score = parseval(gold_bank, pred_bank, max_len=eval_cfg.max_len,
                         include_punct=eval_cfg.include_punct,
                         punct_prefixes=eval_cfg.punct_prefixes)
        final_ll = records[-1].log_likelihood if records else math.nan
        report.folds.append(FoldResult(k, score, fallbacks, final_ll))

    report.finalize(baseline=baseline)
    return report
