"""Command-line entry point: annotate, train, parse, eval, xval, lexstats.

Every subcommand that writes an artifact also writes a sibling
``<out>.manifest.json`` recording the tool version, all flags, input file
digests and seeds, so any run can be reproduced from its manifest alone.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

from . import __version__
from . import annotate as annotate_mod
from . import cky
from .annotate import DEFAULT_TARGET_TAGS, StrategyConfig
from .evaluation import (EvalConfig, ExperimentReport, TrainConfig,
                         cross_validate, parseval)
from .grammar import Grammar, train_latent
from .lexicon import hierarchy_stats, load_hierarchy, load_lexicon
from .treebank import read_treebank, serialize_tree, write_treebank


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_path, subcommand, args, input_paths):
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "lgparse",
        "version": __version__,
        "subcommand": subcommand,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "flags": flags,
        "inputs": {p: _sha256(p) for p in input_paths if p},
    }
    with open(str(out_path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)


def _load_treebank(path, flag):
    try:
        return read_treebank(path)
    except OSError as exc:
        raise CliError("%s: cannot read %s (%s)" % (flag, path, exc))
    except Exception as exc:
        raise CliError("%s: %s is not a valid treebank (%s)" % (flag, path, exc))


def _load_lexicon(path, flag):
    try:
        return load_lexicon(path)
    except OSError as exc:
        raise CliError("%s: cannot read %s (%s)" % (flag, path, exc))
    except Exception as exc:
        raise CliError("%s: %s is not a valid lexicon (%s)" % (flag, path, exc))


def _load_hierarchies(paths, flag):
    out = {}
    for path in paths or ():
        try:
            h = load_hierarchy(path)
        except OSError as exc:
            raise CliError("%s: cannot read %s (%s)" % (flag, path, exc))
        except Exception as exc:
            raise CliError("%s: %s is not a valid hierarchy (%s)" % (flag, path, exc))
        out[h.category] = h
    return out


def _strategy_from_flags(args):
    targets = (frozenset(args.target_tags.split(","))
               if args.target_tags else DEFAULT_TARGET_TAGS[args.category])
    try:
        return StrategyConfig(args.method, args.category, targets,
                              args.level, args.max_amb)
    except annotate_mod.BadStrategy as exc:
        raise CliError("--method/--category/--level: %s" % exc)


def cmd_annotate(args):
    tb = _load_treebank(args.treebank, "--treebank")
    lex = _load_lexicon(args.lexicon, "--lexicon")
    cfg = _strategy_from_flags(args)
    hierarchy = None
    if cfg.method == "hierarchy":
        if not args.hierarchy:
            raise CliError("--hierarchy is required with --method hier")
        hierarchy = _load_hierarchies([args.hierarchy], "--hierarchy").get(cfg.category)
        if hierarchy is None:
            raise CliError("--hierarchy: file is for another category than %s"
                           % cfg.category)
    out_tb = annotate_mod.annotate(tb, lex, hierarchy, cfg)
    cov = annotate_mod.coverage(tb, out_tb, cfg.target_tags)
    write_treebank(out_tb, args.out)
    with open(args.out + ".coverage.json", "w", encoding="utf-8") as fh:
        json.dump({"strategy": cfg.to_kv(),
                   "n_distinct_forms": cov.n_distinct_forms,
                   "n_annotated_forms": cov.n_annotated_forms,
                   "pct_annotated": cov.pct_annotated,
                   "tagset_size_after": cov.tagset_size_after}, fh, indent=2)
    _write_manifest(args.out, "annotate", args,
                    [args.treebank, args.lexicon, args.hierarchy])
    print("annotated %d trees; %d/%d distinct forms rewritten (%.1f%%); "
          "tagset %d" % (len(out_tb), cov.n_annotated_forms,
                         cov.n_distinct_forms, cov.pct_annotated,
                         cov.tagset_size_after))
    return 0


def cmd_train(args):
    tb = _load_treebank(args.treebank, "--treebank")
    if args.rounds < 0:
        raise CliError("--rounds must be >= 0")
    if args.em_iters < 1:
        raise CliError("--em-iters must be >= 1")
    g, records = train_latent(
        tb, rounds=args.rounds, em_iters=args.em_iters, noise=args.noise,
        seed=args.seed, rare_threshold=args.rare_threshold,
        h_markov=args.h_markov, v_markov=args.v_markov)
    for rec in records:
        print("round %d iter %d log-likelihood %.6f"
              % (rec.n_split_rounds, rec.iteration, rec.log_likelihood))
    g.save(args.out)
    _write_manifest(args.out, "train", args, [args.treebank])
    print("grammar: %d symbols, %d rules -> %s"
          % (len(g.n_subs), g.n_rules(), args.out))
    return 0


def _read_sentences(path, flag):
    sentences = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tokens = []
                for tok in line.split():
                    if "##" in tok:
                        surface, lemma = tok.split("##", 1)
                        tokens.append((surface, lemma))
                    else:
                        tokens.append((tok, None))
                if tokens:
                    sentences.append(tokens)
    except OSError as exc:
        raise CliError("%s: cannot read %s (%s)" % (flag, path, exc))
    return sentences


def cmd_parse(args):
    try:
        g = Grammar.load(args.grammar)
    except Exception as exc:
        raise CliError("--grammar: %s" % exc)
    sentences = _read_sentences(args.input, "--input")
    if not sentences:
        raise CliError("--input: no sentences found")
    trees = cky.parse_many(g, sentences, jobs=args.jobs)
    fallbacks = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for tokens, tree in zip(sentences, trees):
            if tree is None:
                fallbacks += 1
                tree = cky.fallback_tree(g, tokens)
            fh.write(serialize_tree(tree) + "\n")
    _write_manifest(args.out, "parse", args, [args.grammar, args.input])
    if fallbacks:
        print("warning: %d/%d sentences had no parse (right-branching "
              "fallback emitted)" % (fallbacks, len(sentences)), file=sys.stderr)
    if fallbacks == len(sentences):
        print("error: no sentence received a parse", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args):
    gold = _load_treebank(args.gold, "--gold")
    pred = _load_treebank(args.pred, "--pred")
    score = parseval(gold, pred, max_len=args.max_len,
                     include_punct=args.punct == "include")
    print("P %.2f  R %.2f  F %.2f  tagging %.2f  scored %d  excluded %d"
          % (score.precision, score.recall, score.f1, score.tagging_accuracy,
             score.n_sentences_scored, score.n_excluded_by_length))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(score.__dict__, fh, indent=2)
        _write_manifest(args.out, "eval", args, [args.gold, args.pred])
    return 0


def _build_plan(args, lex, hierarchies):
    plan = []
    for spec in args.strategy or ():
        try:
            cfg = StrategyConfig.from_kv(spec)
        except annotate_mod.BadStrategy as exc:
            raise CliError("--strategy: %s" % exc)
        if lex is None:
            raise CliError("--lexicon is required when --strategy is given")
        hierarchy = hierarchies.get(cfg.category)
        if cfg.method == "hierarchy" and hierarchy is None:
            raise CliError("--hierarchy: no hierarchy loaded for category %s"
                           % cfg.category)
        plan.append((cfg, lex, hierarchy))
    return plan


def cmd_xval(args):
    if args.p < 2:
        raise CliError("--p must be >= 2")
    tb = _load_treebank(args.treebank, "--treebank")
    lex = _load_lexicon(args.lexicon, "--lexicon") if args.lexicon else None
    hierarchies = _load_hierarchies(args.hierarchy, "--hierarchy")
    plan = _build_plan(args, lex, hierarchies)
    baseline = None
    if args.baseline_report:
        try:
            with open(args.baseline_report, encoding="utf-8") as fh:
                baseline = ExperimentReport.from_dict(json.load(fh))
        except Exception as exc:
            raise CliError("--baseline-report: %s" % exc)
    train_cfg = TrainConfig(rounds=args.rounds, em_iters=args.em_iters,
                            noise=args.noise, seed=args.seed,
                            rare_threshold=args.rare_threshold,
                            h_markov=args.h_markov, v_markov=args.v_markov)
    eval_cfg = EvalConfig(max_len=args.max_len,
                          include_punct=args.punct == "include")
    report = cross_validate(tb, plan, train_cfg, eval_cfg, p=args.p,
                            seed=args.seed_folds, baseline=baseline,
                            jobs=args.jobs)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    _write_manifest(args.out, "xval", args,
                    [args.treebank, args.lexicon] + list(args.hierarchy or ()))
    print(report.to_text())
    return 0


def cmd_lexstats(args):
    lex = _load_lexicon(args.lexicon, "--lexicon")
    hierarchies = _load_hierarchies([args.hierarchy], "--hierarchy")
    (category, hierarchy), = hierarchies.items()
    rows = [hierarchy_stats(lex, hierarchy, level)
            for level in range(hierarchy.n_levels)]
    lines = ["category: %s" % category,
             "Niveau  #classes  #formes  #entrées  AVG_1    AVG_2"]
    for s in rows:
        lines.append("%6d  %8d  %7d  %8d  %7.2f  %5.2f"
                     % (s.level, s.n_classes, s.n_forms, s.n_entries,
                        s.avg1, s.avg2))
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        _write_manifest(args.out, "lexstats", args, [args.lexicon, args.hierarchy])
    return 0


def _add_train_flags(sub):
    sub.add_argument("--rounds", type=int, default=1,
                     help="split rounds; 0 gives the plain treebank PCFG")
    sub.add_argument("--em-iters", type=int, default=2,
                     help="EM iterations after each split")
    sub.add_argument("--noise", type=float, default=0.01,
                     help="symmetry-breaking noise applied at each split")
    sub.add_argument("--seed", type=int, default=0, help="training seed")
    sub.add_argument("--rare-threshold", type=int, default=5,
                     help="words rarer than this use shape signatures")
    sub.add_argument("--h-markov", type=int, default=2,
                     help="horizontal context kept on binarization symbols")
    sub.add_argument("--v-markov", type=int, default=1,
                     help="vertical (ancestor) context on phrase labels")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lgparse",
        description="Treebank tag refinement from a syntactic lexicon, "
                    "latent PCFG training, CKY parsing, PARSEVAL evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("annotate", help="rewrite pre-terminal tags from the lexicon")
    p.add_argument("--treebank", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--hierarchy")
    p.add_argument("--method", required=True, choices=["table", "hier", "member"])
    p.add_argument("--category", required=True, choices=["V", "N"])
    p.add_argument("--level", type=int)
    p.add_argument("--max-amb", type=int, default=1)
    p.add_argument("--target-tags", help="comma-separated base tags to rewrite")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = subs.add_parser("train", help="train a latent-annotation PCFG")
    p.add_argument("--treebank", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("parse", help="CKY-parse tokenized sentences")
    p.add_argument("--grammar", required=True)
    p.add_argument("--input", required=True,
                   help="one sentence per line, tokens as surface##lemma")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_parse)

    p = subs.add_parser("eval", help="PARSEVAL-score a predicted bank against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--punct", choices=["include", "exclude"], default="include")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("xval", help="p-fold cross-validation experiment")
    p.add_argument("--treebank", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--hierarchy", action="append", default=[],
                   help="hierarchy file; repeat for several categories")
    p.add_argument("--strategy", action="append", default=[],
                   help="key=value block, e.g. 'method=hier category=V "
                        "level=3 max_amb=1'; repeat to combine")
    p.add_argument("--p", type=int, default=10, help="number of folds")
    p.add_argument("--seed-folds", type=int, default=0,
                   help="seed of the fold shuffle")
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--punct", choices=["include", "exclude"], default="include")
    p.add_argument("--baseline-report",
                   help="JSON report used for the absolute-gain columns")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_xval)

    p = subs.add_parser("lexstats", help="per-level hierarchy statistics table")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_lexstats)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.code
    except Exception as exc:  # runtime failure
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
