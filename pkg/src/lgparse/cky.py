"""CKY decoding under a (possibly latent) grammar.

Viterbi search runs over split symbols; the best derivation is then
projected back to base symbols and unbinarized.  Unary rules may apply at
most twice in a row within a span cell, which keeps cyclic unary grammars
decodable; the summed inside score uses the same derivation space.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .grammar import INTERMEDIATE_PREFIX, LATENT_SEP, unbinarize_tree
from .treebank import Leaf, Tree

NEG_INF = float("-inf")
UNARY_LAYERS = 3  # core layer + at most two stacked unary applications
RELAXED_LOGPROB = math.log(1e-10)


class ParseError(Exception):
    pass


class NoParse(ParseError):
    pass


class MalformedIntermediate(ParseError):
    pass


class Chart:
    """Span table: (i, j) -> per-symbol best scores with backpointers.

    Each cell holds UNARY_LAYERS layers; layer 0 is built from lexical or
    binary steps, layer k > 0 from one unary step over layer k - 1.
    """

    def __init__(self, n):
        self.n = n
        self.cells = {(i, j): [dict() for _ in range(UNARY_LAYERS)]
                      for i in range(n) for j in range(i + 1, n + 1)}
        self.best = {span: {} for span in self.cells}

    def finish_cell(self, span):
        """Combine layers into per-symbol elementwise best scores."""
        merged = {}
        for layer_id, layer in enumerate(self.cells[span]):
            for base, (scores, _) in layer.items():
                if base not in merged:
                    merged[base] = (scores.copy(),
                                    np.full(len(scores), layer_id, dtype=int))
                else:
                    cur, lay = merged[base]
                    better = scores > cur
                    cur[better] = scores[better]
                    lay[better] = layer_id
        self.best[span] = merged


def _label(base, sub, n_subs):
    return base if n_subs == 1 else "%s%s%d" % (base, LATENT_SEP, sub)


def _lex_entries(g, index, word, relax):
    entries = index.tags_for(g.lexical_key(word))
    if entries:
        return entries
    if not relax:
        return ()
    # unknown even by signature: admit every tag at a tiny flat probability
    bases = sorted({t for (t, _) in g.lexical})
    return [(t, np.full(g.n_subs[t], RELAXED_LOGPROB)) for t in bases]


def _apply_unaries(g, index, cell, max_fn):
    """Fill unary layers 1..UNARY_LAYERS-1 from the layer below."""
    for layer_id in range(1, UNARY_LAYERS):
        below = cell[layer_id - 1]
        target = cell[layer_id]
        for b, (scores_b, _) in below.items():
            for a, logw in index.unary_by_child.get(b, ()):
                cand = logw + scores_b[None, :]
                best_b = cand.argmax(axis=1)
                best = cand[np.arange(len(cand)), best_b]
                max_fn(target, a, best,
                       [("un", b, int(k)) for k in best_b])


def _improve(target, base, scores, bps):
    if base not in target:
        keep = scores > NEG_INF
        if not keep.any():
            return
        target[base] = (scores.copy(), list(bps))
        return
    cur, cur_bps = target[base]
    for s in range(len(scores)):
        if scores[s] > cur[s]:
            cur[s] = scores[s]
            cur_bps[s] = bps[s]


def build_chart(g, tokens, relax_unknown=False):
    """Viterbi chart over split symbols for a token sequence."""
    index = g.decode_index()
    n = len(tokens)
    if n == 0:
        raise NoParse("empty token sequence")
    chart = Chart(n)

    for i, (surface, _) in enumerate(tokens):
        cell = chart.cells[(i, i + 1)]
        for t, logvec in _lex_entries(g, index, surface, relax_unknown):
            _improve(cell[0], t, logvec, [("lex",)] * len(logvec))
        _apply_unaries(g, index, cell, _improve)
        chart.finish_cell((i, i + 1))

    for span in range(2, n + 1):
        for i in range(n - span + 1):
            j = i + span
            cell = chart.cells[(i, j)]
            for split in range(i + 1, j):
                left = chart.best[(i, split)]
                right = chart.best[(split, j)]
                for (b, c), rules in index.by_children.items():
                    if b not in left or c not in right:
                        continue
                    sl, _ = left[b]
                    sr, _ = right[c]
                    pair = sl[:, None] + sr[None, :]
                    for a, logw in rules:
                        cand = logw + pair[None, :, :]
                        flat = cand.reshape(len(cand), -1)
                        arg = flat.argmax(axis=1)
                        best = flat[np.arange(len(flat)), arg]
                        nc = logw.shape[2]
                        bps = [("bin", split, b, int(k // nc), c, int(k % nc))
                               for k in arg]
                        _improve(cell[0], a, best, bps)
            _apply_unaries(g, index, cell, _improve)
            chart.finish_cell((i, j))
    return chart


def _backtrace(chart, tokens, g, i, j, base, sub, layer_id):
    scores_bps = chart.cells[(i, j)][layer_id][base]
    bp = scores_bps[1][sub]
    label = _label(base, sub, g.n_subs[base])
    if bp[0] == "lex":
        surface, lemma = tokens[i]
        return Tree(label, [Leaf(surface, lemma)])
    if bp[0] == "un":
        _, b, k = bp
        return Tree(label, [_backtrace(chart, tokens, g, i, j, b, k, layer_id - 1)])
    _, split, b, bk, c, ck = bp
    lb = int(chart.best[(i, split)][b][1][bk])
    lc = int(chart.best[(split, j)][c][1][ck])
    return Tree(label, [_backtrace(chart, tokens, g, i, split, b, bk, lb),
                        _backtrace(chart, tokens, g, split, j, c, ck, lc)])


def viterbi_logscore(chart, g):
    root = chart.best[(0, chart.n)].get(g.start)
    if root is None:
        return NEG_INF
    return float(root[0].max())


def parse(g, tokens, relax_unknown=False):
    """Best tree for the token sequence, projected and unbinarized.

    Tokens are (surface, lemma-or-None) pairs; lemmas pass through to the
    output leaves.  Raises NoParse when no derivation covers the span.
    """
    chart = build_chart(g, tokens, relax_unknown)
    root = chart.best[(0, chart.n)].get(g.start)
    if root is None or not np.isfinite(root[0].max()):
        raise NoParse("no derivation spans the input")
    sub = int(root[0].argmax())
    layer_id = int(root[1][sub])
    raw = _backtrace(chart, tokens, g, 0, chart.n, g.start, sub, layer_id)
    return project_and_unbinarize(raw)


def sentence_loglik(g, tokens, relax_unknown=False):
    """Log of the summed probability of all derivations of the tokens."""
    index = g.decode_index()
    n = len(tokens)
    if n == 0:
        raise NoParse("empty token sequence")
    totals = {}  # span -> {base: log inside vector}

    def logaddexp_into(store, base, scores):
        if base in store:
            store[base] = np.logaddexp(store[base], scores)
        else:
            store[base] = scores.copy()

    def close_unaries(layer0):
        layers = [layer0]
        for _ in range(1, UNARY_LAYERS):
            below = layers[-1]
            nxt = {}
            for b, scores_b in below.items():
                for a, logw in index.unary_by_child.get(b, ()):
                    logaddexp_into(nxt, a, _logsumexp_matvec(logw, scores_b))
            layers.append(nxt)
        total = {}
        for layer in layers:
            for base, scores in layer.items():
                logaddexp_into(total, base, scores)
        return total

    for i, (surface, _) in enumerate(tokens):
        layer0 = {}
        for t, logvec in _lex_entries(g, index, surface, relax_unknown):
            logaddexp_into(layer0, t, logvec)
        totals[(i, i + 1)] = close_unaries(layer0)

    for span in range(2, n + 1):
        for i in range(n - span + 1):
            j = i + span
            layer0 = {}
            for split in range(i + 1, j):
                left = totals[(i, split)]
                right = totals[(split, j)]
                for (b, c), rules in index.by_children.items():
                    if b not in left or c not in right:
                        continue
                    pair = left[b][:, None] + right[c][None, :]
                    for a, logw in rules:
                        cand = _logsumexp_tensor(logw, pair)
                        logaddexp_into(layer0, a, cand)
            totals[(i, j)] = close_unaries(layer0)

    root = totals[(0, n)].get(g.start)
    if root is None:
        raise NoParse("no derivation spans the input")
    result = _logsumexp_vec(root)
    if not np.isfinite(result):
        raise NoParse("no derivation spans the input")
    return float(result)


def _logsumexp_vec(v):
    m = v.max()
    if not np.isfinite(m):
        return NEG_INF
    return float(m + np.log(np.exp(v - m).sum()))


def _logsumexp_matvec(logw, scores):
    # out[a] = logsumexp_b(logw[a, b] + scores[b])
    cand = logw + scores[None, :]
    m = cand.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m[:, 0] + np.log(np.exp(cand - m).sum(axis=1))


def _logsumexp_tensor(logw, pair):
    # out[a] = logsumexp_{b,c}(logw[a, b, c] + pair[b, c])
    cand = (logw + pair[None, :, :]).reshape(logw.shape[0], -1)
    m = cand.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m[:, 0] + np.log(np.exp(cand - m).sum(axis=1))


def project_label(label):
    """Remove a trailing latent index, e.g. NP^3 -> NP."""
    head, sep, tail = label.rpartition(LATENT_SEP)
    if sep and tail.isdigit():
        return head
    return label


def project_and_unbinarize(tree):
    """Strip latent indices, splice out @-intermediates, drop vertical context."""
    if tree.label.startswith(INTERMEDIATE_PREFIX):
        raise MalformedIntermediate("root %r is an intermediate symbol" % tree.label)

    def strip(node):
        if isinstance(node, Leaf):
            return Leaf(node.surface, node.lemma)
        if node.label.startswith(INTERMEDIATE_PREFIX) and node.is_preterminal:
            raise MalformedIntermediate(
                "intermediate %r directly dominates a token" % node.label)
        return Tree(project_label(node.label), [strip(c) for c in node.children])

    return unbinarize_tree(strip(tree))


def fallback_tree(g, tokens):
    """Right-branching cover tree used when decoding fails.

    Every token gets its most plausible tag; the spine is labeled with the
    start symbol so downstream PARSEVAL stays computable.
    """
    index = g.decode_index()
    pts = [Tree(index.best_tag(g.lexical_key(surface)), [Leaf(surface, lemma)])
           for surface, lemma in tokens]
    if len(pts) == 1:
        return Tree(g.start, [pts[0]])
    node = Tree(g.start, pts[-2:])
    for pt in reversed(pts[:-2]):
        node = Tree(g.start, [pt, node])
    return node


_pool_grammar = None


def _pool_init(g):
    global _pool_grammar
    _pool_grammar = g


def _pool_parse(args):
    idx, tokens, relax = args
    try:
        return idx, parse(_pool_grammar, tokens, relax_unknown=relax)
    except NoParse:
        if relax:
            return idx, None
        try:
            return idx, parse(_pool_grammar, tokens, relax_unknown=True)
        except NoParse:
            return idx, None


def parse_many(g, token_lists, jobs=1, relax_unknown=False):
    """Parse a batch; returns a tree or None (no parse even relaxed) per input.

    With jobs > 1 sentences are distributed over worker processes; output
    order matches input order regardless of the worker count.
    """
    tasks = [(i, toks, relax_unknown) for i, toks in enumerate(token_lists)]
    results = [None] * len(tasks)
    if jobs <= 1 or len(tasks) < 2:
        _pool_init(g)
        for task in tasks:
            idx, tree = _pool_parse(task)
            results[idx] = tree
        return results
    with ProcessPoolExecutor(max_workers=jobs, initializer=_pool_init,
                             initargs=(g,)) as pool:
        for idx, tree in pool.map(_pool_parse, tasks, chunksize=8):
            results[idx] = tree
    return results
