"""PCFG extraction and latent-annotation refinement trained with EM.

The refinement loop follows the split-and-reestimate scheme: every
nonterminal except the start symbol is split into subsymbols, rule mass is
divided symmetrically over the images (plus a small symmetry-breaking
noise), and the subsymbol parameters are fit by expectation-maximization
with the inside-outside recursions constrained to each observed tree.

Reserved label characters introduced by this module:

* ``@`` prefix      binarization intermediates, e.g. ``@NP|AP-N``;
* ``~``             vertical (ancestor) context separator;
* ``^``             latent subsymbol index separator, e.g. ``NP^3``.

Input treebank labels must not use any of them.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .treebank import Leaf, Tree, Treebank

INTERMEDIATE_PREFIX = "@"
VERTICAL_SEP = "~"
LATENT_SEP = "^"
HORIZONTAL_JOIN = "-"
SIGNATURE_PREFIX = "UNK-"

DEFAULT_RARE_THRESHOLD = 5
DEFAULT_H_MARKOV = 2
DEFAULT_V_MARKOV = 1


class GrammarError(Exception):
    pass


class EmptyTreebank(GrammarError):
    pass


class ReservedLabel(GrammarError):
    pass


class NotBinarized(GrammarError):
    pass


class BadFactor(GrammarError):
    pass


class BadNoise(GrammarError):
    pass


class UnderivableTree(GrammarError):
    def __init__(self, index, reason=""):
        super().__init__("tree %d is not derivable%s"
                         % (index, ": " + reason if reason else ""))
        self.index = index


@dataclass
class TrainingRecord:
    """Log-likelihood of the bank before one EM update."""

    iteration: int
    log_likelihood: float
    n_split_rounds: int


def word_signature(word):
    """Shape class for rare and unknown words.

    Encodes initial capitalization, digit presence, hyphen presence and a
    short lowercase suffix; rare words share statistics through it.
    """
    cap = "c" if word[:1].isupper() else ""
    dig = "d" if any(ch.isdigit() for ch in word) else ""
    hyp = "h" if "-" in word else ""
    suffix = word[-3:].lower()
    return "%s%s%s%s-%s" % (SIGNATURE_PREFIX, cap, dig, hyp, suffix)


# ---------------------------------------------------------------------------
# binarization

def _check_labels(tree):
    if tree.label.startswith(INTERMEDIATE_PREFIX) or VERTICAL_SEP in tree.label \
            or LATENT_SEP in tree.label:
        raise ReservedLabel("label %r uses a reserved marker (@, ~ or ^)" % tree.label)
    for child in tree.children:
        if isinstance(child, Tree):
            _check_labels(child)


def binarize_tree(tree, h_markov=DEFAULT_H_MARKOV, v_markov=DEFAULT_V_MARKOV):
    """Right-factored binarization with Markov context on intermediates.

    Intermediate nodes are labeled ``@PARENT|next-siblings`` with up to
    h_markov sibling labels of context; with v_markov > 1, phrase labels
    carry up to v_markov - 1 ancestor labels after ``~``.  Pre-terminals
    are never altered.
    """
    _check_labels(tree)

    def walk(node, ancestors):
        if node.is_preterminal:
            leaf = node.children[0]
            return Tree(node.label, [Leaf(leaf.surface, leaf.lemma)])
        label = node.label
        if v_markov > 1 and ancestors:
            label = label + VERTICAL_SEP + VERTICAL_SEP.join(ancestors[:v_markov - 1])
        inner = [node.label] + ancestors
        kids = [walk(c, inner) for c in node.children]
        if len(kids) <= 2:
            return Tree(label, kids)
        ctx_labels = [c.label for c in node.children]

        def rest(i):
            ctx = HORIZONTAL_JOIN.join(ctx_labels[i:i + h_markov])
            name = INTERMEDIATE_PREFIX + label + "|" + ctx
            if len(kids) - i == 2:
                return Tree(name, [kids[i], kids[i + 1]])
            return Tree(name, [kids[i], rest(i + 1)])

        return Tree(label, [kids[0], rest(1)])

    return walk(tree, [])


def unbinarize_tree(tree):
    """Inverse of binarize_tree: splice out intermediates, drop vertical context."""

    def expand(node):
        if isinstance(node, Leaf):
            return [Leaf(node.surface, node.lemma)]
        if node.label.startswith(INTERMEDIATE_PREFIX):
            out = []
            for child in node.children:
                out.extend(expand(child))
            return out
        return [walk(node)]

    def walk(node):
        kids = []
        for child in node.children:
            kids.extend(expand(child))
        return Tree(node.label.split(VERTICAL_SEP, 1)[0], kids)

    return walk(tree)


def binarize(tb, h_markov=DEFAULT_H_MARKOV, v_markov=DEFAULT_V_MARKOV):
    return Treebank([binarize_tree(t, h_markov, v_markov) for t in tb], id=tb.id)


def unbinarize(tb):
    return Treebank([unbinarize_tree(t) for t in tb], id=tb.id)


# ---------------------------------------------------------------------------
# grammar

class Grammar:
    """Weighted CFG over possibly-split symbols.

    Rule probabilities are stored per base rule as numpy arrays over
    subsymbol indices: binary (A, B, C) -> (nA, nB, nC), unary (A, B) ->
    (nA, nB), lexical (T, word) -> (nT,).  For every LHS subsymbol the
    probabilities of all its rules sum to one.
    """

    def __init__(self, start, n_subs, binary, unary, lexical, vocab,
                 rare_threshold=DEFAULT_RARE_THRESHOLD, meta=None):
        self.start = start
        self.n_subs = dict(n_subs)
        self.binary = binary
        self.unary = unary
        self.lexical = lexical
        self.vocab = frozenset(vocab)
        self.rare_threshold = rare_threshold
        self.meta = dict(meta or {})
        self._decode = None

    @property
    def split_map(self):
        """Base symbol -> list of latent subsymbol names."""
        return {base: [base if n == 1 else "%s%s%d" % (base, LATENT_SEP, i)
                       for i in range(n)]
                for base, n in self.n_subs.items()}

    def n_rules(self):
        return len(self.binary) + len(self.unary) + len(self.lexical)

    def lexical_key(self, word):
        """Map a surface form to the token the lexical model knows."""
        return word if word in self.vocab else word_signature(word)

    def lhs_totals(self):
        """Per-base-symbol vectors of summed rule probability (should be 1)."""
        totals = {base: np.zeros(n) for base, n in self.n_subs.items()}
        for (a, _, _), w in self.binary.items():
            totals[a] += w.sum(axis=(1, 2))
        for (a, _), w in self.unary.items():
            totals[a] += w.sum(axis=1)
        for (t, _), w in self.lexical.items():
            totals[t] += w
        return totals

    def check_normalized(self, tol=1e-9):
        for base, total in self.lhs_totals().items():
            if np.any(np.abs(total - 1.0) > tol):
                raise GrammarError(
                    "rules of %r sum to %s, not 1" % (base, total))

    def decode_index(self):
        if self._decode is None:
            self._decode = _DecodeIndex(self)
        return self._decode

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_decode"] = None  # rebuilt on demand; keeps pickles small
        return state

    # -- serialization ------------------------------------------------------

    def saves(self):
        """Text form; probabilities carry 17 significant digits."""
        lines = ["PCFG-LA 1", "START %s" % self.start,
                 "RARE %d" % self.rare_threshold]
        for key in sorted(self.meta):
            lines.append("META %s %s" % (key, self.meta[key]))
        lines.append("VOCAB")
        lines.extend(sorted(self.vocab))
        lines.append("NONTERMS")
        for base in sorted(self.n_subs):
            lines.append("%s %d" % (base, self.n_subs[base]))
        lines.append("BINARY")
        for (a, b, c) in sorted(self.binary):
            w = self.binary[(a, b, c)]
            for ia in range(w.shape[0]):
                for ib in range(w.shape[1]):
                    for ic in range(w.shape[2]):
                        p = w[ia, ib, ic]
                        if p > 0:
                            lines.append("%s %d %s %d %s %d %.17g"
                                         % (a, ia, b, ib, c, ic, p))
        lines.append("UNARY")
        for (a, b) in sorted(self.unary):
            w = self.unary[(a, b)]
            for ia in range(w.shape[0]):
                for ib in range(w.shape[1]):
                    p = w[ia, ib]
                    if p > 0:
                        lines.append("%s %d %s %d %.17g" % (a, ia, b, ib, p))
        lines.append("LEXICAL")
        for (t, word) in sorted(self.lexical):
            w = self.lexical[(t, word)]
            for it in range(w.shape[0]):
                p = w[it]
                if p > 0:
                    lines.append("%s %d %s %.17g" % (t, it, word, p))
        lines.append("END")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.saves())

    @classmethod
    def loads(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("PCFG-LA"):
            raise GrammarError("not a grammar file")
        start = None
        rare = DEFAULT_RARE_THRESHOLD
        meta = {}
        vocab = set()
        n_subs = {}
        binary, unary, lexical = {}, {}, {}
        section = None
        for line in lines[1:]:
            if not line.strip():
                continue
            if line == "END":
                break
            if line in ("VOCAB", "NONTERMS", "BINARY", "UNARY", "LEXICAL"):
                section = line
                continue
            if line.startswith("START "):
                start = line.split(" ", 1)[1]
                continue
            if line.startswith("RARE "):
                rare = int(line.split(" ", 1)[1])
                continue
            if line.startswith("META "):
                _, key, value = line.split(" ", 2)
                meta[key] = value
                continue
            if section == "VOCAB":
                vocab.add(line)
            elif section == "NONTERMS":
                base, n = line.rsplit(" ", 1)
                n_subs[base] = int(n)
            elif section == "BINARY":
                a, ia, b, ib, c, ic, p = line.split(" ")
                key = (a, b, c)
                if key not in binary:
                    binary[key] = np.zeros((n_subs[a], n_subs[b], n_subs[c]))
                binary[key][int(ia), int(ib), int(ic)] = float(p)
            elif section == "UNARY":
                a, ia, b, ib, p = line.split(" ")
                key = (a, b)
                if key not in unary:
                    unary[key] = np.zeros((n_subs[a], n_subs[b]))
                unary[key][int(ia), int(ib)] = float(p)
            elif section == "LEXICAL":
                t, it, word, p = line.split(" ")
                key = (t, word)
                if key not in lexical:
                    lexical[key] = np.zeros(n_subs[t])
                lexical[key][int(it)] = float(p)
            else:
                raise GrammarError("line outside any section: %r" % line)
        if start is None:
            raise GrammarError("missing START line")
        return cls(start, n_subs, binary, unary, lexical, vocab, rare, meta)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


class _DecodeIndex:
    """Log-space rule views grouped for bottom-up decoding."""

    def __init__(self, g):
        with np.errstate(divide="ignore"):
            self.by_children = defaultdict(list)
            for (a, b, c), w in g.binary.items():
                self.by_children[b, c].append((a, np.log(w)))
            self.by_children = dict(self.by_children)
            self.unary_by_child = defaultdict(list)
            for (a, b), w in g.unary.items():
                self.unary_by_child[b].append((a, np.log(w)))
            self.unary_by_child = dict(self.unary_by_child)
            self.lex_by_word = defaultdict(list)
            for (t, word), w in g.lexical.items():
                self.lex_by_word[word].append((t, np.log(w)))
            self.lex_by_word = dict(self.lex_by_word)
        # most plausible tag per known token, for no-parse fallbacks
        mass = Counter()
        for (t, _), w in g.lexical.items():
            mass[t] += float(w.sum())
        self.default_tag = mass.most_common(1)[0][0] if mass else "X"

    def tags_for(self, word):
        return self.lex_by_word.get(word, ())

    def best_tag(self, word):
        entries = self.tags_for(word)
        if not entries:
            return self.default_tag
        return max(entries, key=lambda tw: float(tw[1].max()))[0]


# ---------------------------------------------------------------------------
# extraction

def _iter_rules(tree, index):
    """Yield (kind, payload) for every internal node; reject non-binary trees."""
    if tree.is_preterminal:
        yield ("lex", tree.label, tree.children[0].surface)
        return
    if len(tree.children) == 1:
        yield ("un", tree.label, tree.children[0].label)
    elif len(tree.children) == 2:
        yield ("bin", tree.label, tree.children[0].label, tree.children[1].label)
    else:
        raise NotBinarized("tree %d has a node with %d children; binarize first"
                           % (index, len(tree.children)))
    for child in tree.children:
        yield from _iter_rules(child, index)


def extract_pcfg(tb, rare_threshold=DEFAULT_RARE_THRESHOLD):
    """Maximum-likelihood PCFG from a binarized treebank.

    Rule probability is count(rule) / count(LHS); words seen fewer than
    rare_threshold times are replaced by their signature in lexical rules.
    """
    if len(tb) == 0:
        raise EmptyTreebank("cannot extract a grammar from an empty treebank")
    start = tb[0].label
    word_counts = Counter()
    for tree in tb:
        if tree.label != start:
            raise GrammarError("mixed root labels: %r vs %r" % (tree.label, start))
        for leaf in tree.leaves():
            word_counts[leaf.surface] += 1
    vocab = {w for w, n in word_counts.items() if n >= rare_threshold}

    bin_counts, un_counts, lex_counts = Counter(), Counter(), Counter()
    lhs_counts = Counter()
    for i, tree in enumerate(tb):
        for rule in _iter_rules(tree, i):
            if rule[0] == "lex":
                _, t, word = rule
                if word not in vocab:
                    word = word_signature(word)
                lex_counts[t, word] += 1
                lhs_counts[t] += 1
            elif rule[0] == "un":
                _, a, b = rule
                un_counts[a, b] += 1
                lhs_counts[a] += 1
            else:
                _, a, b, c = rule
                bin_counts[a, b, c] += 1
                lhs_counts[a] += 1

    symbols = set(lhs_counts)
    for (_, b, c) in bin_counts:
        symbols.update((b, c))
    for (_, b) in un_counts:
        symbols.add(b)
    n_subs = {s: 1 for s in symbols}
    binary = {k: np.array([[[n / lhs_counts[k[0]]]]]) for k, n in bin_counts.items()}
    unary = {k: np.array([[n / lhs_counts[k[0]]]]) for k, n in un_counts.items()}
    lexical = {k: np.array([n / lhs_counts[k[0]]]) for k, n in lex_counts.items()}
    return Grammar(start, n_subs, binary, unary, lexical, vocab, rare_threshold)


# ---------------------------------------------------------------------------
# latent splitting

def split_symbols(g, factor=2, noise=0.01, seed=0):
    """Split every nonterminal except the start into `factor` subsymbols.

    Each rule's mass is divided uniformly over its child images, then
    perturbed by a relative noise uniform in [-noise, +noise] and
    renormalized per LHS subsymbol.  With noise = 0 the split is symmetric
    and preserves all tree and sentence likelihoods.
    """
    if factor < 2:
        raise BadFactor("split factor must be >= 2, got %r" % factor)
    if not 0.0 <= noise < 0.5:
        raise BadNoise("noise must be in [0, 0.5), got %r" % noise)
    rng = np.random.default_rng(seed)
    mult = {base: (1 if base == g.start else factor) for base in g.n_subs}
    n_subs = {base: n * mult[base] for base, n in g.n_subs.items()}

    def grow(w, axes_bases):
        for axis, base in enumerate(axes_bases):
            w = np.repeat(w, mult[base], axis=axis)
        return w

    binary, unary, lexical = {}, {}, {}
    for key in sorted(g.binary):
        a, b, c = key
        w = grow(g.binary[key], (a, b, c)) / (mult[b] * mult[c])
        if noise > 0:
            w = w * (1.0 + rng.uniform(-noise, noise, size=w.shape))
        binary[key] = w
    for key in sorted(g.unary):
        a, b = key
        w = grow(g.unary[key], (a, b)) / mult[b]
        if noise > 0:
            w = w * (1.0 + rng.uniform(-noise, noise, size=w.shape))
        unary[key] = w
    for key in sorted(g.lexical):
        t, _ = key
        w = grow(g.lexical[key], (t,))
        if noise > 0:
            w = w * (1.0 + rng.uniform(-noise, noise, size=w.shape))
        lexical[key] = w

    out = Grammar(g.start, n_subs, binary, unary, lexical, g.vocab,
                  g.rare_threshold, g.meta)
    _renormalize(out)
    return out


def _renormalize(g):
    totals = g.lhs_totals()
    for (a, _, _), w in g.binary.items():
        w /= totals[a][:, None, None]
    for (a, _), w in g.unary.items():
        w /= totals[a][:, None]
    for (t, _), w in g.lexical.items():
        w /= totals[t]


# ---------------------------------------------------------------------------
# EM over observed trees

def _tree_ops(tree, index):
    """Postorder op list for the inside-outside recursions on one tree."""
    ops = []

    def visit(node):
        if node.is_preterminal:
            ops.append(("lex", node.label, node.children[0].surface, None, None))
            return len(ops) - 1
        if len(node.children) == 1:
            ci = visit(node.children[0])
            ops.append(("un", node.label, node.children[0].label, ci, None))
        elif len(node.children) == 2:
            li = visit(node.children[0])
            ri = visit(node.children[1])
            ops.append(("bin", (node.label, node.children[0].label,
                                node.children[1].label), None, li, ri))
        else:
            raise NotBinarized("tree %d is not binarized" % index)
        return len(ops) - 1

    visit(tree)
    return ops


def _inside(ops, g, index):
    vecs = [None] * len(ops)
    logscale = [0.0] * len(ops)
    for i, (kind, x, y, li, ri) in enumerate(ops):
        if kind == "lex":
            w = g.lexical.get((x, g.lexical_key(y)))
            if w is None:
                raise UnderivableTree(index, "no lexical rule %s -> %s" % (x, y))
            vec, extra = w, 0.0
        elif kind == "un":
            w = g.unary.get((x, y))
            if w is None:
                raise UnderivableTree(index, "no unary rule %s -> %s" % (x, y))
            vec, extra = w @ vecs[li], logscale[li]
        else:
            w = g.binary.get(x)
            if w is None:
                raise UnderivableTree(index, "no binary rule %s -> %s %s" % x)
            vec = np.einsum("abc,b,c->a", w, vecs[li], vecs[ri])
            extra = logscale[li] + logscale[ri]
        m = float(vec.max())
        if m <= 0.0:
            raise UnderivableTree(index, "zero-probability subtree")
        vecs[i] = vec / m
        logscale[i] = math.log(m) + extra
    return vecs, logscale


def tree_loglik(g, tree, index=0):
    """Log probability of one observed tree under the (possibly split) grammar."""
    if tree.label != g.start:
        raise UnderivableTree(index, "root %r is not the start symbol" % tree.label)
    ops = _tree_ops(tree, index)
    vecs, logscale = _inside(ops, g, index)
    return math.log(float(vecs[-1][0])) + logscale[-1]


def em_round(g, tb):
    """One EM update of the split grammar on a binarized treebank.

    Runs the inside-outside E-step constrained to every observed tree, then
    reestimates all rule probabilities.  Returns the new grammar and a
    record holding the bank log-likelihood under the input grammar.
    """
    bin_counts = {k: np.zeros_like(w) for k, w in g.binary.items()}
    un_counts = {k: np.zeros_like(w) for k, w in g.unary.items()}
    lex_counts = {k: np.zeros_like(w) for k, w in g.lexical.items()}
    total_ll = 0.0

    for index, tree in enumerate(tb):
        if tree.label != g.start:
            raise UnderivableTree(index, "root %r is not the start symbol" % tree.label)
        ops = _tree_ops(tree, index)
        vecs, ls = _inside(ops, g, index)
        ll = math.log(float(vecs[-1][0])) + ls[-1]
        total_ll += ll

        # outside pass, scaled like the inside pass
        out = [None] * len(ops)
        ols = [0.0] * len(ops)
        out[-1] = np.ones_like(vecs[-1])
        for i in range(len(ops) - 1, -1, -1):
            kind, x, y, li, ri = ops[i]
            if kind == "lex":
                continue
            if kind == "un":
                w = g.unary[(x, y)]
                o = out[i] @ w
                m = float(o.max())
                out[li] = o / m
                ols[li] = math.log(m) + ols[i]
            else:
                w = g.binary[x]
                ob = np.einsum("abc,a,c->b", w, out[i], vecs[ri])
                oc = np.einsum("abc,a,b->c", w, out[i], vecs[li])
                mb, mc = float(ob.max()), float(oc.max())
                out[li] = ob / mb
                ols[li] = math.log(mb) + ols[i] + ls[ri]
                out[ri] = oc / mc
                ols[ri] = math.log(mc) + ols[i] + ls[li]

        # expected rule counts
        for i, (kind, x, y, li, ri) in enumerate(ops):
            if kind == "lex":
                key = (x, g.lexical_key(y))
                scale = math.exp(ols[i] - ll)
                lex_counts[key] += g.lexical[key] * out[i] * scale
            elif kind == "un":
                scale = math.exp(ols[i] + ls[li] - ll)
                un_counts[(x, y)] += (g.unary[(x, y)]
                                      * out[i][:, None] * vecs[li][None, :] * scale)
            else:
                scale = math.exp(ols[i] + ls[li] + ls[ri] - ll)
                bin_counts[x] += (g.binary[x] * out[i][:, None, None]
                                  * vecs[li][None, :, None]
                                  * vecs[ri][None, None, :] * scale)

    totals = {base: np.zeros(n) for base, n in g.n_subs.items()}
    for (a, _, _), cnt in bin_counts.items():
        totals[a] += cnt.sum(axis=(1, 2))
    for (a, _), cnt in un_counts.items():
        totals[a] += cnt.sum(axis=1)
    for (t, _), cnt in lex_counts.items():
        totals[t] += cnt

    def reestimate(counts, old, extra_axes):
        new = {}
        for key, cnt in counts.items():
            total = totals[key[0]]
            dead = total <= 0.0
            safe = np.where(dead, 1.0, total)
            w = cnt / safe.reshape((-1,) + (1,) * extra_axes)
            if dead.any():
                # no evidence for a subsymbol: keep its previous distribution
                w = np.where(dead.reshape((-1,) + (1,) * extra_axes), old[key], w)
            new[key] = w
        return new

    new_binary = reestimate(bin_counts, g.binary, 2)
    new_unary = reestimate(un_counts, g.unary, 1)
    new_lexical = reestimate(lex_counts, g.lexical, 0)

    out = Grammar(g.start, g.n_subs, new_binary, new_unary, new_lexical,
                  g.vocab, g.rare_threshold, g.meta)
    record = TrainingRecord(iteration=0, log_likelihood=total_ll, n_split_rounds=0)
    return out, record


def train_latent(tb, rounds, em_iters, noise=0.01, seed=0,
                 rare_threshold=DEFAULT_RARE_THRESHOLD,
                 h_markov=DEFAULT_H_MARKOV, v_markov=DEFAULT_V_MARKOV):
    """Full training schedule: extract, then (split + EM * em_iters) * rounds.

    The raw treebank is binarized internally.  Deterministic for a fixed
    seed; each split round draws its noise from a sub-seed derived from
    (seed, round).
    """
    if rounds < 0:
        raise GrammarError("rounds must be >= 0")
    if em_iters < 1:
        raise GrammarError("em_iters must be >= 1")
    btb = binarize(tb, h_markov, v_markov)
    g = extract_pcfg(btb, rare_threshold)
    g.meta.update({"rounds": rounds, "em_iters": em_iters, "noise": noise,
                   "seed": seed, "h_markov": h_markov, "v_markov": v_markov})
    records = []
    iteration = 0
    for r in range(1, rounds + 1):
        g = split_symbols(g, 2, noise, seed=np.random.SeedSequence([seed, r]))
        for _ in range(em_iters):
            g, rec = em_round(g, btb)
            rec.iteration = iteration
            rec.n_split_rounds = r
            records.append(rec)
            iteration += 1
    return g, records
