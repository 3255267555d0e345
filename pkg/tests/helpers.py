"""Shared generators and brute-force oracles for the test suite.

The oracles here deliberately avoid the library's chart/EM code paths:
derivations are enumerated recursively, rule counts are retallied by plain
traversal, and statistics are recomputed with counters straight from the
fixture text.
"""

import math
import os
import random

import numpy as np

from lgparse.grammar import Grammar
from lgparse.treebank import Leaf, Tree, Treebank

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture(name):
    return os.path.join(FIXTURES, name)


# ---------------------------------------------------------------------------
# random trees

LABELS = ["S", "NP", "VP", "PP", "AP", "X", "Y"]
TAGS = ["D", "N", "V", "A", "P", "ADV", "PONCT"]
WORDS = ["le", "chat", "dort", "mange", "grande", "sur", "faute", "elle"]


KNOWN_LEMMAS = ["sanctionner", "chérir", "dormir", "donner",
                "sanction", "promenade"]


def random_tree(rng, max_depth=4, max_arity=4):
    """Random well-formed tree; phrase nodes never dominate leaves directly.

    A share of leaves carries lemmas from the toy lexicon so annotation
    strategies actually fire on random banks.
    """

    def leaf():
        surface = rng.choice(WORDS)
        roll = rng.random()
        if roll < 0.3:
            lemma = rng.choice(KNOWN_LEMMAS)
        elif roll < 0.7:
            lemma = surface + "er"
        else:
            lemma = None
        return Tree(rng.choice(TAGS), [Leaf(surface, lemma)])

    def phrase(depth):
        if depth >= max_depth:
            return leaf()
        arity = rng.randint(1, max_arity)
        children = []
        for _ in range(arity):
            if rng.random() < 0.45 or depth + 1 >= max_depth:
                children.append(leaf())
            else:
                children.append(phrase(depth + 1))
        return Tree(rng.choice(LABELS), children)

    root = phrase(0)
    if root.is_preterminal:
        root = Tree("S", [root])
    else:
        root.label = "S"  # uniform start symbol, as grammar extraction expects
    return root


def random_treebank(rng, n_trees, **kwargs):
    return Treebank([random_tree(rng, **kwargs) for _ in range(n_trees)],
                    id="random")


# ---------------------------------------------------------------------------
# random PCFGs and derivation enumeration

def random_pcfg(rng, n_nonterminals=4, n_words=4, seed_tag="S0"):
    """Small random PCFG: every symbol has lexical coverage, some binaries
    and occasionally a unary rule."""
    nts = ["S%d" % i for i in range(n_nonterminals)]
    words = ["a", "b", "c", "d", "e", "f"][:n_words]
    binary, unary, lexical = {}, {}, {}
    weights = {a: {} for a in nts}
    for a in nts:
        for w in rng.sample(words, rng.randint(1, 2)):
            weights[a][("lex", w)] = rng.uniform(0.2, 1.0)
        for _ in range(rng.randint(1, 3)):
            b, c = rng.choice(nts), rng.choice(nts)
            weights[a][("bin", b, c)] = rng.uniform(0.2, 1.0)
        if rng.random() < 0.4:
            b = rng.choice([x for x in nts if x != a])
            weights[a][("un", b)] = rng.uniform(0.2, 1.0)
    for a in nts:
        total = sum(weights[a].values())
        for key, w in weights[a].items():
            p = w / total
            if key[0] == "lex":
                lexical[(a, key[1])] = np.array([p])
            elif key[0] == "bin":
                binary[(a, key[1], key[2])] = np.array([[[p]]])
            else:
                unary[(a, key[1])] = np.array([[p]])
    n_subs = {a: 1 for a in nts}
    return Grammar(seed_tag, n_subs, binary, unary, lexical, set(words),
                   rare_threshold=1)


def sample_sentence(rng, g, max_len=6, tries=60):
    """Sample a sentence from the grammar, keeping it short."""

    def expand(sym, depth):
        options = []
        for (a, w), vec in g.lexical.items():
            if a == sym:
                options.append(("lex", w, float(vec[0])))
        if depth < 8:
            for (a, b, c), arr in g.binary.items():
                if a == sym:
                    options.append(("bin", (b, c), float(arr[0, 0, 0])))
            for (a, b), arr in g.unary.items():
                if a == sym:
                    options.append(("un", b, float(arr[0, 0])))
        total = sum(o[2] for o in options)
        x = rng.random() * total
        for kind, payload, w in options:
            x -= w
            if x < 0:
                break
        if kind == "lex":
            return [payload]
        if kind == "un":
            return expand(payload, depth + 1)
        return expand(payload[0], depth + 1) + expand(payload[1], depth + 1)

    for _ in range(tries):
        words = expand(g.start, 0)
        if len(words) <= max_len:
            return [(w, None) for w in words]
    word = next(w for (a, w) in g.lexical if a == g.start)
    return [(word, None)]


def enumerate_derivations(g, tokens, unary_budget=2):
    """All derivations (probability, tree) with at most `unary_budget`
    consecutive unary applications per span; mirrors the decoder contract."""
    words = [g.lexical_key(s) for s, _ in tokens]
    memo = {}

    def sub_label(base, sub):
        return base if g.n_subs[base] == 1 else "%s^%d" % (base, sub)

    def derive(i, j, base, sub, budget):
        key = (i, j, base, sub, budget)
        if key in memo:
            return memo[key]
        results = []
        if j - i == 1:
            vec = g.lexical.get((base, words[i]))
            if vec is not None and vec[sub] > 0:
                surface, lemma = tokens[i]
                results.append((float(vec[sub]),
                                Tree(sub_label(base, sub), [Leaf(surface, lemma)])))
        for (a, b, c), arr in g.binary.items():
            if a != base:
                continue
            for split in range(i + 1, j):
                for bs in range(arr.shape[1]):
                    lefts = derive(i, split, b, bs, 2)
                    if not lefts:
                        continue
                    for cs in range(arr.shape[2]):
                        p = float(arr[sub, bs, cs])
                        if p <= 0:
                            continue
                        rights = derive(split, j, c, cs, 2)
                        for lp, lt in lefts:
                            for rp, rt in rights:
                                results.append((p * lp * rp,
                                                Tree(sub_label(base, sub), [lt, rt])))
        if budget > 0:
            for (a, b), arr in g.unary.items():
                if a != base:
                    continue
                for bs in range(arr.shape[1]):
                    p = float(arr[sub, bs])
                    if p <= 0:
                        continue
                    for cp, ct in derive(i, j, b, bs, budget - 1):
                        results.append((p * cp, Tree(sub_label(base, sub), [ct])))
        memo[key] = results
        return results

    return derive(0, len(tokens), g.start, 0, unary_budget)


def brute_force_best(g, tokens):
    derivs = enumerate_derivations(g, tokens)
    if not derivs:
        return None
    return max(p for p, _ in derivs)


def brute_force_total(g, tokens):
    derivs = enumerate_derivations(g, tokens)
    if not derivs:
        return None
    return math.fsum(p for p, _ in derivs)


# ---------------------------------------------------------------------------
# brute-force rule recount (independent of extract_pcfg)

def recount_rules(tb):
    """Tally rules by explicit traversal; returns (rule -> count, lhs -> count)."""
    rules = {}
    lhs = {}

    def visit(node):
        if node.is_preterminal:
            key = ("lex", node.label, node.children[0].surface)
        elif len(node.children) == 1:
            key = ("un", node.label, node.children[0].label)
        else:
            key = ("bin", node.label, tuple(c.label for c in node.children))
        rules[key] = rules.get(key, 0) + 1
        lhs[node.label] = lhs.get(node.label, 0) + 1
        if not node.is_preterminal:
            for c in node.children:
                visit(c)

    for tree in tb:
        visit(tree)
    return rules, lhs
