"""Syntactic lexicon and table hierarchy: loading, class queries, statistics.

The lexicon is a flat TSV exchange format, one entry per line:

    lemma<TAB>V|N<TAB>table_id

The hierarchy file declares, per category, the level-0 table universe and
one block per grouping level:

    category: V
    tables: 4 6 12 31R ...
    level 1:
    4<TAB>QTD2
    6<TAB>QTD2
    ...

Level 0 is always the identity map (class = table id).  Every level must
map every declared table, and each level k+1 class must be a union of
level-k classes (the hierarchy only ever coarsens).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass


VERB = "V"
NOUN = "N"
CATEGORIES = (VERB, NOUN)


class LexiconError(Exception):
    pass


class BadCategory(LexiconError):
    pass


class MalformedLine(LexiconError):
    pass


class BadLevel(LexiconError):
    pass


class UnknownTableAtLevel(LexiconError):
    def __init__(self, level, table_id):
        super().__init__("table %r has no class at level %d" % (table_id, level))
        self.level = level
        self.table_id = table_id


class NotACoarsening(LexiconError):
    pass


class Lexicon:
    """Deduplicated (lemma, category, table) entries indexed by (lemma, category)."""

    def __init__(self, entries):
        self.entries = sorted(set(entries))
        self.index = defaultdict(set)
        for lemma, cat, table in self.entries:
            self.index[lemma, cat].add(table)
        self.index = dict(self.index)

    def tables_for(self, lemma, category):
        return sorted(self.index.get((lemma, category), ()))

    def contains(self, lemma, category):
        return (lemma, category) in self.index

    def lemmas(self, category):
        return sorted(l for l, c in self.index if c == category)

    def n_entries(self, category=None):
        if category is None:
            return len(self.entries)
        return sum(1 for _, c, _ in self.entries if c == category)

    def __len__(self):
        return len(self.entries)


class Hierarchy:
    """Per-level mapping from table id to class name for one category."""

    def __init__(self, category, tables, level_maps):
        if category not in CATEGORIES:
            raise BadCategory("category must be V or N, got %r" % category)
        self.category = category
        self.tables = sorted(tables)
        # level 0 is synthesized as the identity over the declared universe
        self.levels = [{t: t for t in self.tables}] + [dict(m) for m in level_maps]
        self._validate()

    @property
    def n_levels(self):
        return len(self.levels)

    def _validate(self):
        declared = set(self.tables)
        for k, mapping in enumerate(self.levels[1:], start=1):
            if not mapping:
                raise MalformedLine("level %d block is empty" % k)
            for t in mapping:
                if t not in declared:
                    raise UnknownTableAtLevel(k, t)
            for t in declared:
                if t not in mapping:
                    raise UnknownTableAtLevel(k, t)
            for name in mapping.values():
                if not name:
                    raise MalformedLine("empty class name at level %d" % k)
        # coarsening: two tables sharing a class at level k must share one at k+1
        for k in range(1, self.n_levels - 1):
            rep = {}
            for t in self.tables:
                lower, upper = self.levels[k][t], self.levels[k + 1][t]
                if lower in rep and rep[lower] != upper:
                    raise NotACoarsening(
                        "level-%d class %r splits across level-%d classes %r and %r"
                        % (k, lower, k + 1, rep[lower], upper))
                rep[lower] = upper

    def class_of(self, table_id, level):
        if not 0 <= level < self.n_levels:
            raise BadLevel("level %d out of range [0, %d)" % (level, self.n_levels))
        if level == 0:
            return table_id
        try:
            return self.levels[level][table_id]
        except KeyError:
            raise UnknownTableAtLevel(level, table_id) from None


@dataclass
class HierarchyStats:
    """One row of the per-level hierarchy summary."""

    level: int
    n_classes: int
    n_forms: int
    n_entries: int
    avg1: float
    avg2: float


def load_lexicon(path):
    """Load the TSV lexicon; lines starting with '#' are comments."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[2]:
                raise MalformedLine("line %d: expected lemma<TAB>V|N<TAB>table" % lineno)
            lemma, cat, table = parts
            if cat not in CATEGORIES:
                raise BadCategory("line %d: category %r not in {V, N}" % (lineno, cat))
            entries.append((lemma, cat, table))
    return Lexicon(entries)


def load_hierarchy(path):
    """Load a per-category hierarchy file (see module docstring for the grammar)."""
    category = None
    tables = []
    level_maps = []
    current = None
    expected_level = 1
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped.startswith("category:"):
                category = stripped.split(":", 1)[1].strip()
            elif stripped.startswith("tables:"):
                tables.extend(stripped.split(":", 1)[1].split())
            elif stripped.startswith("level"):
                head = stripped.rstrip(":").split()
                if len(head) != 2 or not head[1].isdigit():
                    raise MalformedLine("line %d: bad level header %r" % (lineno, stripped))
                if int(head[1]) != expected_level:
                    raise MalformedLine(
                        "line %d: expected 'level %d:', got %r"
                        % (lineno, expected_level, stripped))
                current = {}
                level_maps.append(current)
                expected_level += 1
            else:
                if current is None:
                    raise MalformedLine("line %d: mapping outside a level block" % lineno)
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                    raise MalformedLine("line %d: expected table<TAB>class" % lineno)
                current[parts[0].strip()] = parts[1].strip()
    if category is None:
        raise MalformedLine("missing 'category:' header")
    if not tables:
        raise MalformedLine("missing 'tables:' declaration")
    return Hierarchy(category, tables, level_maps)


def classes_for(lex, hierarchy, lemma, category, level):
    """Sorted class names at the given level for a lemma; empty if unknown."""
    tables = lex.index.get((lemma, category), ())
    return sorted({hierarchy.class_of(t, level) for t in tables})


def ambiguity_of(lex, hierarchy, lemma, category, level):
    """Number of distinct classes of a lemma at a level; 0 for unknown lemmas."""
    return len(classes_for(lex, hierarchy, lemma, category, level))


def hierarchy_stats(lex, hierarchy, level):
    """Summary of one hierarchy level against a lexicon.

    n_entries counts distinct (lemma, class) pairs at the level; avg1 is
    entries per realized class; avg2 is the mean class count per distinct
    lemma of the category.
    """
    if not 0 <= level < hierarchy.n_levels:
        raise BadLevel("level %d out of range [0, %d)" % (level, hierarchy.n_levels))
    category = hierarchy.category
    lemmas = lex.lemmas(category)
    pairs = set()
    per_lemma = []
    for lemma in lemmas:
        classes = classes_for(lex, hierarchy, lemma, category, level)
        per_lemma.append(len(classes))
        pairs.update((lemma, c) for c in classes)
    classes_used = {c for _, c in pairs}
    n_classes = len(classes_used)
    n_entries = len(pairs)
    n_forms = len(lemmas)
    avg1 = n_entries / n_classes if n_classes else 0.0
    avg2 = sum(per_lemma) / n_forms if n_forms else 0.0
    return HierarchyStats(level, n_classes, n_forms, n_entries, avg1, avg2)
