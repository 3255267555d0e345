"""Deterministic toy corpora for demos, smoke tests and the acceptance suite.

The generator samples French-flavored sentences from a small hand-written
grammar.  Leaves carry lemmas, verbs and a few nouns appear in the shipped
toy lexicon, and a share of sentences ends in a punctuation token, so every
pipeline stage (annotation, training, parsing, punctuation handling) has
something to bite on.
"""

from __future__ import annotations

import random

from .treebank import Leaf, Tree, Treebank

# phrase expansions with weights; symbols in _WORDS are pre-terminals
_RULES = {
    "S": [(("NP", "VP"), 5), (("NP", "VP", "PONCT"), 3), (("NP", "VP", "PP"), 2)],
    "NP": [(("D", "N"), 6), (("D", "N", "A"), 3), (("D", "A", "N"), 1)],
    "VP": [(("V",), 3), (("V", "NP"), 4), (("V", "PP"), 2), (("V", "NP", "PP"), 1)],
    "PP": [(("P", "NP"), 1)],
}

_WORDS = {
    "D": [("le", "le"), ("la", "le"), ("un", "un"), ("une", "un")],
    "N": [("chat", "chat"), ("chien", "chien"), ("sanction", "sanction"),
          ("décision", "décision"), ("promenade", "promenade"),
          ("voisine", "voisin"), ("faute", "faute")],
    "V": [("dort", "dormir"), ("mange", "manger"), ("sanctionne", "sanctionner"),
          ("chérit", "chérir"), ("aime", "aimer"), ("donne", "donner")],
    "A": [("noir", "noir"), ("grande", "grand"), ("petite", "petit")],
    "P": [("de", "de"), ("sur", "sur"), ("avec", "avec")],
    "PONCT": [(".", None), ("!", None)],
}


def _pick(rng, weighted):
    total = sum(w for _, w in weighted)
    x = rng.random() * total
    for item, w in weighted:
        x -= w
        if x < 0:
            return item
    return weighted[-1][0]


def toy_tree(rng):
    def expand(symbol):
        if symbol in _WORDS:
            surface, lemma = rng.choice(_WORDS[symbol])
            return Tree(symbol, [Leaf(surface, lemma)])
        rhs = _pick(rng, _RULES[symbol])
        return Tree(symbol, [expand(s) for s in rhs])

    return expand("S")


def toy_treebank(n_trees, seed=0, id="toy"):
    rng = random.Random(seed)
    return Treebank([toy_tree(rng) for _ in range(n_trees)], id=id)


# toy lexicon and hierarchies covering the generator's verb and noun lemmas;
# same content as the files shipped under tests/fixtures
TOY_LEXICON_TSV = """\
# toy syntactic lexicon: lemma<TAB>category<TAB>table
sanctionner\tV\t6
sanctionner\tV\t12
chérir\tV\t12
aimer\tV\t4
donner\tV\t36DT
dormir\tV\t31R
sanction\tN\taa
décision\tN\taa
promenade\tN\tan04
don\tN\tdr1
"""

TOY_VERB_HIERARCHY = """\
# toy verb table hierarchy
category: V
tables: 4 6 12 31R 35L 36DT 38L
level 1:
4\tQTD2
6\tQTD2
12\tQTD2
31R\tNI
35L\tNI
36DT\tDTR
38L\tDTR
level 2:
4\tQTD2
6\tQTD2
12\tQTD2
31R\tINT
35L\tINT
36DT\tDTR
38L\tDTR
level 3:
4\tTD2
6\tTD2
12\tTD2
31R\tITR
35L\tITR
36DT\tTD2
38L\tTD2
"""

TOY_NOUN_HIERARCHY = """\
# toy predicative-noun tables, grouped by maximum argument count
category: N
tables: aa an04 dr1
level 1:
aa\tA2
an04\tA1
dr1\tA3
"""
