"""Tag-refinement strategies: rewrite pre-terminal tags from lexicon classes.

Three methods, applied to pre-terminals whose base tag is in the target set:

* ``table``       append the sorted table ids of the token's lemma,
                  e.g. V -> V_6_12;
* ``hierarchy``   append the sorted hierarchy classes at a chosen level,
                  e.g. V -> V_TD2;
* ``membership``  append ``IN`` when the lemma is in the lexicon at all,
                  e.g. N -> N_IN.

A tag is only rewritten when the number of ids/classes is between 1 and
``max_ambiguity``.  Suffix parts are joined with ``_`` in lexicographic
order, so annotated tags are canonical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .lexicon import CATEGORIES, classes_for
from .treebank import Tree, Treebank, collect_tagset

SEP = "_"
MEMBER_SUFFIX = "IN"

METHOD_TABLE = "table"
METHOD_HIERARCHY = "hierarchy"
METHOD_MEMBERSHIP = "membership"
METHODS = (METHOD_TABLE, METHOD_HIERARCHY, METHOD_MEMBERSHIP)

# short CLI spellings
_METHOD_ALIASES = {"table": METHOD_TABLE, "hier": METHOD_HIERARCHY,
                   "member": METHOD_MEMBERSHIP}

# default rewrite targets: the French Treebank convention distinguishes six
# morphology-bearing verb tags and two noun tags
DEFAULT_TARGET_TAGS = {
    "V": frozenset({"V", "VIMP", "VINF", "VPP", "VPR", "VS"}),
    "N": frozenset({"NC", "NPP"}),
}


class AnnotateError(Exception):
    pass


class BadStrategy(AnnotateError):
    pass


class MissingHierarchy(AnnotateError):
    pass


class ReservedSeparator(AnnotateError):
    pass


class OverlappingTargets(AnnotateError):
    pass


class AmbiguousStrip(AnnotateError):
    pass


class MisalignedTreebanks(AnnotateError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    """One annotation strategy: method, category, level, ambiguity cap, targets."""

    method: str
    category: str
    target_tags: frozenset
    level: int | None = None
    max_ambiguity: int = 1

    def __post_init__(self):
        method = _METHOD_ALIASES.get(self.method, self.method)
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "target_tags", frozenset(self.target_tags))
        if method not in METHODS:
            raise BadStrategy("unknown method %r" % self.method)
        if self.category not in CATEGORIES:
            raise BadStrategy("category must be V or N, got %r" % self.category)
        if method == METHOD_HIERARCHY and self.level is None:
            raise BadStrategy("hierarchy method requires a level")
        if self.max_ambiguity < 1:
            raise BadStrategy("max_ambiguity must be >= 1")
        if not self.target_tags:
            raise BadStrategy("target_tags must not be empty")

    def to_kv(self):
        """Flat key=value form recorded into experiment reports."""
        parts = ["method=%s" % self.method, "category=%s" % self.category]
        if self.level is not None:
            parts.append("level=%d" % self.level)
        parts.append("max_amb=%d" % self.max_ambiguity)
        parts.append("targets=%s" % ",".join(sorted(self.target_tags)))
        return " ".join(parts)

    @classmethod
    def from_kv(cls, text):
        kv = {}
        for item in text.split():
            if "=" not in item:
                raise BadStrategy("bad strategy item %r (expected key=value)" % item)
            key, value = item.split("=", 1)
            kv[key.strip()] = value.strip()
        try:
            method = kv.pop("method")
            category = kv.pop("category")
        except KeyError as exc:
            raise BadStrategy("strategy spec needs %s" % exc) from None
        level = int(kv.pop("level")) if "level" in kv else None
        max_amb = int(kv.pop("max_amb", kv.pop("max-amb", 1)))
        targets = kv.pop("targets", None)
        if kv:
            raise BadStrategy("unknown strategy keys: %s" % ", ".join(sorted(kv)))
        if targets is None:
            tags = DEFAULT_TARGET_TAGS.get(category, frozenset())
        else:
            tags = frozenset(targets.split(","))
        return cls(method, category, tags, level, max_amb)


@dataclass
class CoverageReport:
    """Share of distinct target forms whose tag was rewritten."""

    n_distinct_forms: int
    n_annotated_forms: int
    pct_annotated: float
    tagset_size_after: int


def _check_separators(tagset, target_tags):
    # Stripping is prefix-based: no target tag may be an underscore-extension
    # of another tag in the bank, or the inverse map would be ambiguous.
    for t in target_tags:
        for b in tagset:
            if b != t and (b.startswith(t + SEP) or t.startswith(b + SEP)):
                raise ReservedSeparator(
                    "tags %r and %r differ by a %r suffix; annotation would "
                    "not be reversible" % (t, b, SEP))


def _natural_key(value):
    """Sort key treating digit runs numerically, so table 6 precedes 12."""
    parts = re.split(r"(\d+)", value)
    return [(0, int(p)) if p.isdigit() else (1, p) for p in parts if p]


def _suffix_for(key, lex, hierarchy, cfg):
    """Suffix parts for one lexical key, or None when the tag stays unchanged."""
    if cfg.method == METHOD_MEMBERSHIP:
        return [MEMBER_SUFFIX] if lex.contains(key, cfg.category) else None
    if cfg.method == METHOD_TABLE:
        values = lex.tables_for(key, cfg.category)
    else:
        values = classes_for(lex, hierarchy, key, cfg.category, cfg.level)
    if 1 <= len(values) <= cfg.max_ambiguity:
        return sorted(values, key=_natural_key)
    return None


def annotate(tb, lex, hierarchy, cfg):
    """Return a copy of the bank with target pre-terminal tags rewritten.

    Only pre-terminal labels change; structure, surfaces and lemmas are
    preserved.  Lexicon lookup uses the leaf lemma when present, else the
    surface form.
    """
    if cfg.method == METHOD_HIERARCHY and hierarchy is None:
        raise MissingHierarchy("method %r needs a hierarchy" % cfg.method)
    _check_separators(collect_tagset(tb), cfg.target_tags)
    cache = {}

    def rewrite(node):
        if node.is_preterminal:
            new = Tree(node.label, [node.children[0]])
            if node.label in cfg.target_tags:
                key = node.children[0].key
                if key not in cache:
                    cache[key] = _suffix_for(key, lex, hierarchy, cfg)
                suffix = cache[key]
                if suffix is not None:
                    new.label = node.label + SEP + SEP.join(suffix)
            return new
        return Tree(node.label, [rewrite(c) for c in node.children])

    return Treebank([rewrite(t) for t in tb], id=tb.id)


def combine(tb, lex_v, h_v, cfg_v, lex_n, cfg_n, h_n=None):
    """Apply a verb strategy then a noun strategy; targets must be disjoint."""
    overlap = cfg_v.target_tags & cfg_n.target_tags
    if overlap:
        raise OverlappingTargets("target tags shared: %s" % ", ".join(sorted(overlap)))
    out = annotate(tb, lex_v, h_v, cfg_v)
    return annotate(out, lex_n, h_n, cfg_n)


def _strip_tag(tag, base_tags):
    if tag in base_tags:
        prefix_hits = [b for b in base_tags if b != tag and tag.startswith(b + SEP)]
        if prefix_hits:
            raise AmbiguousStrip(
                "tag %r is both a base tag and a suffixed form of %r"
                % (tag, prefix_hits[0]))
        return tag
    hits = [b for b in base_tags if tag.startswith(b + SEP)]
    if len(hits) > 1:
        raise AmbiguousStrip(
            "tag %r strips to any of %s" % (tag, ", ".join(sorted(hits))))
    return hits[0] if hits else tag


def strip(tb, base_tags):
    """Undo annotation: revert every tag of the form BASE_suffix to BASE."""
    base_tags = set(base_tags)

    def rewrite(node):
        if node.is_preterminal:
            return Tree(_strip_tag(node.label, base_tags), [node.children[0]])
        return Tree(node.label, [rewrite(c) for c in node.children])

    return Treebank([rewrite(t) for t in tb], id=tb.id)


def coverage(tb_before, tb_after, target_tags):
    """Coverage of an annotation run: distinct rewritten forms over distinct forms."""
    target_tags = set(target_tags)
    if len(tb_before) != len(tb_after):
        raise MisalignedTreebanks(
            "tree counts differ: %d vs %d" % (len(tb_before), len(tb_after)))
    seen = set()
    changed = set()
    for before, after in zip(tb_before, tb_after):
        pts_b = list(before.preterminals())
        pts_a = list(after.preterminals())
        if len(pts_b) != len(pts_a):
            raise MisalignedTreebanks("tree %r changed shape" % before.label)
        for b, a in zip(pts_b, pts_a):
            if b.children[0].surface != a.children[0].surface:
                raise MisalignedTreebanks(
                    "token mismatch: %r vs %r"
                    % (b.children[0].surface, a.children[0].surface))
            if b.label in target_tags:
                key = b.children[0].key
                seen.add(key)
                if a.label != b.label:
                    changed.add(key)
    pct = 100.0 * len(changed) / len(seen) if seen else 0.0
    return CoverageReport(len(seen), len(changed), pct,
                          len(collect_tagset(tb_after)))
