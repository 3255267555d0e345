"""lgparse: treebank tag refinement from a syntactic lexicon, latent-annotation
PCFG training, CKY parsing and PARSEVAL cross-validation."""

__version__ = "0.1.0"

from .treebank import (
    Leaf, Tree, Treebank, FoldSplit,
    parse_bracketed, serialize, read_treebank, write_treebank,
    collect_tagset, split_folds, subset,
)
from .lexicon import (
    Lexicon, Hierarchy, HierarchyStats,
    load_lexicon, load_hierarchy, classes_for, ambiguity_of, hierarchy_stats,
)
from .annotate import (
    StrategyConfig, CoverageReport, DEFAULT_TARGET_TAGS,
    annotate, combine, strip, coverage,
)
from .grammar import (
    Grammar, TrainingRecord,
    binarize, unbinarize, extract_pcfg, split_symbols, em_round, train_latent,
    tree_loglik, word_signature,
)
from .cky import (
    Chart, NoParse,
    parse, parse_many, sentence_loglik, project_and_unbinarize, fallback_tree,
)
from .evaluation import (
    ParsevalScore, TrainConfig, EvalConfig, ExperimentReport,
    parseval, tagging_accuracy, cross_validate, apply_plan,
)
