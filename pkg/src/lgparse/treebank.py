"""Bracketed constituency treebanks: reading, writing, tagsets, fold partitions.

A treebank is an ordered list of labeled trees.  Leaves carry a surface form
and an optional lemma; the textual form of a leaf is ``surface`` or
``surface##lemma``.  Order is significant: fold assignment depends on it.
"""

from __future__ import annotations

import random
import re


LEMMA_SEP = "##"

_TOKEN_RE = re.compile(r"[()]|[^\s()]+")


class TreebankError(Exception):
    """Base class for treebank format errors."""

    def __init__(self, message, position=None):
        if position is not None:
            message = "%s (at offset %d)" % (message, position)
        super().__init__(message)
        self.position = position


class UnbalancedBrackets(TreebankError):
    pass


class EmptyLabel(TreebankError):
    pass


class LeafUnderPhrase(TreebankError):
    pass


class EmptyNode(TreebankError):
    pass


class ReservedMarker(TreebankError):
    """A label or token misuses the reserved ``##`` lemma marker."""


class InvalidP(TreebankError):
    pass


class Leaf:
    """Terminal token: surface form plus optional lemma."""

    __slots__ = ("surface", "lemma")

    def __init__(self, surface, lemma=None):
        self.surface = surface
        self.lemma = lemma

    @property
    def key(self):
        """Lookup key for lexicon matching: lemma when present, else surface."""
        return self.lemma if self.lemma is not None else self.surface

    def __eq__(self, other):
        return (isinstance(other, Leaf)
                and self.surface == other.surface
                and self.lemma == other.lemma)

    def __repr__(self):
        if self.lemma is None:
            return "Leaf(%r)" % self.surface
        return "Leaf(%r, %r)" % (self.surface, self.lemma)


class Tree:
    """Internal node of a constituency tree.

    A pre-terminal has exactly one child and that child is a Leaf; every
    other internal node has one or more Tree children.
    """

    __slots__ = ("label", "children")

    def __init__(self, label, children):
        self.label = label
        self.children = list(children)

    @property
    def is_preterminal(self):
        return len(self.children) == 1 and isinstance(self.children[0], Leaf)

    def leaves(self):
        for child in self.children:
            if isinstance(child, Leaf):
                yield child
            else:
                yield from child.leaves()

    def preterminals(self):
        """Yield pre-terminal nodes left to right."""
        if self.is_preterminal:
            yield self
        else:
            for child in self.children:
                if isinstance(child, Tree):
                    yield from child.preterminals()

    def tokens(self):
        """Return the (surface, lemma) sequence of this tree's leaves."""
        return [(leaf.surface, leaf.lemma) for leaf in self.leaves()]

    def copy(self):
        children = [c.copy() if isinstance(c, Tree) else Leaf(c.surface, c.lemma)
                    for c in self.children]
        return Tree(self.label, children)

    def __eq__(self, other):
        return (isinstance(other, Tree)
                and self.label == other.label
                and self.children == other.children)

    def __repr__(self):
        return serialize_tree(self)


class Treebank:
    """Ordered, immutable-by-convention collection of trees."""

    def __init__(self, trees, id=""):
        self.trees = list(trees)
        self.id = id

    def __len__(self):
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    def __getitem__(self, i):
        return self.trees[i]

    def __eq__(self, other):
        # Identity is the tree sequence; the id is bookkeeping metadata.
        return isinstance(other, Treebank) and self.trees == other.trees

    def __repr__(self):
        return "Treebank(id=%r, %d trees)" % (self.id, len(self.trees))


class FoldSplit:
    """Partition of a treebank into p folds of near-equal size."""

    def __init__(self, p, assignments, seed=None):
        self.p = p
        self.assignments = list(assignments)
        self.seed = seed

    def fold_indices(self, k):
        """Tree indices assigned to fold k."""
        return [i for i, f in enumerate(self.assignments) if f == k]

    def complement_indices(self, k):
        """Tree indices outside fold k (the training portion)."""
        return [i for i, f in enumerate(self.assignments) if f != k]

    def sizes(self):
        counts = [0] * self.p
        for f in self.assignments:
            counts[f] += 1
        return counts


def _check_token(token, position):
    if LEMMA_SEP in token:
        parts = token.split(LEMMA_SEP)
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ReservedMarker("malformed '##' marker in %r" % token, position)
        return Leaf(parts[0], parts[1])
    return Leaf(token)


def parse_bracketed(text, id=""):
    """Parse one or more bracketed trees from a string into a Treebank.

    Trees are ``(LABEL child ...)`` s-expressions; a leaf is a bare token
    ``surface`` or ``surface##lemma``.  Tree order is preserved.
    """
    trees = []
    stack = []  # open nodes: (label, children, position)
    pending_label = False
    for m in _TOKEN_RE.finditer(text):
        tok, pos = m.group(), m.start()
        if tok == "(":
            if pending_label:
                raise EmptyLabel("missing label after '('", pos)
            stack.append(None)
            pending_label = True
        elif tok == ")":
            if pending_label:
                raise EmptyLabel("missing label after '('", pos)
            if not stack:
                raise UnbalancedBrackets("unmatched ')'", pos)
            label, children, npos = stack.pop()
            if not children:
                raise EmptyNode("node %r has no children" % label, npos)
            node = Tree(label, children)
            if any(isinstance(c, Leaf) for c in children) and len(children) > 1:
                raise LeafUnderPhrase(
                    "node %r mixes tokens with subtrees" % label, npos)
            if stack:
                stack[-1][1].append(node)
            else:
                trees.append(node)
        else:
            if pending_label:
                if LEMMA_SEP in tok:
                    raise ReservedMarker("label %r contains reserved '##'" % tok, pos)
                stack[-1] = (tok, [], pos)
                pending_label = False
            elif stack:
                stack[-1][1].append(_check_token(tok, pos))
            else:
                raise UnbalancedBrackets("token %r outside brackets" % tok, pos)
    if stack:
        raise UnbalancedBrackets("unclosed '('", len(text))
    for t in trees:
        _validate(t)
    return Treebank(trees, id=id)


def _validate(tree):
    if isinstance(tree.children[0], Leaf):
        return  # pre-terminal; mixed/multiple leaves were rejected at parse time
    for child in tree.children:
        if isinstance(child, Leaf):
            raise LeafUnderPhrase("token %r under phrase %r" % (child.surface, tree.label))
        _validate(child)


def serialize_tree(tree):
    if isinstance(tree, Leaf):
        if tree.lemma is not None:
            return tree.surface + LEMMA_SEP + tree.lemma
        return tree.surface
    return "(%s %s)" % (tree.label, " ".join(serialize_tree(c) for c in tree.children))


def serialize(tb):
    """Render a treebank as bracketed text, one tree per line."""
    return "".join(serialize_tree(t) + "\n" for t in tb)


def read_treebank(path, id=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_bracketed(text, id=id if id is not None else str(path))


def write_treebank(tb, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(tb))


def collect_tagset(tb):
    """Sorted list of distinct pre-terminal labels in the bank."""
    tags = set()
    for tree in tb:
        for pt in tree.preterminals():
            tags.add(pt.label)
    return sorted(tags)


def split_folds(tb, p, seed=0):
    """Assign each tree to one of p folds.

    With an integer seed the tree order is shuffled (seeded, reproducible)
    before cutting into contiguous blocks; seed=None keeps the original
    order and cuts blocks directly.  Fold sizes differ by at most one.
    """
    n = len(tb)
    if p < 2:
        raise InvalidP("p must be >= 2, got %d" % p)
    if p > n:
        raise InvalidP("p=%d exceeds number of trees (%d)" % (p, n))
    order = list(range(n))
    if seed is not None:
        random.Random(seed).shuffle(order)
    base, extra = divmod(n, p)
    assignments = [0] * n
    pos = 0
    for k in range(p):
        size = base + (1 if k < extra else 0)
        for i in order[pos:pos + size]:
            assignments[i] = k
        pos += size
    return FoldSplit(p, assignments, seed=seed)


def subset(tb, indices, id=""):
    """New treebank holding the trees at the given indices, in index order."""
    return Treebank([tb.trees[i] for i in indices], id=id)
