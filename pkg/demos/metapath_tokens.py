"""
Meta-path tokens on a toy graph
===============================

Build a three-node graph, list every token the tokenizer produces, then see
which LM/KG pairs the matcher links with omega cells.
"""

import numpy as np

from qat.graph import build_subgraph, insert_context_node
from qat.matching import OMEGA1, build_mask, random_embeddings
from qat.metapath import enumerate_metapaths, featurize

# relations: 0 sells, 1 made_of, 2 used_for
RELS = ["sells", "made_of", "used_for"]

g = build_subgraph(
    nodes=[
        (0, "Q", "ring", [1.0, 0.0, 0.0]),
        (1, "A", "jewelry_store", [0.0, 1.0, 0.0]),
        (2, "O", "gold", [0.0, 0.0, 1.0]),
    ],
    edges=[(1, 0, 0), (0, 1, 2), (1, 0, 2)],
    num_relations=3,
    q_nodes=[0],
    a_nodes=[1],
)
g = insert_context_node(g)


def rel_name(r):
    if r == 2 * len(RELS):
        return "context"
    return RELS[r] if r < len(RELS) else RELS[r - len(RELS)] + "^-1"


paths = enumerate_metapaths(g, max_hops=2)
print(f"{len(paths)} tokens")
for p in paths:
    name = lambda v: g.node(v).surface or "[Z]"
    walk = name(p.node_ids[0])
    for r, v in zip(p.relations, p.node_ids[1:]):
        walk += f" -{rel_name(r)}-> {name(v)}"
    f = featurize(p, g).vector
    print(f"  {p.hops}-hop  {walk:55s} |f|={len(f)}  delta={np.round(f[-3:], 1)}")

# the 2-hop tokens are what a single edge cannot express
two_hop = [p for p in paths if p.hops == 2]
print(f"\n{len(two_hop)} two-hop tokens link the question entity to the answer")

# pair each token with the surface of its end nodes and match against a question
question = ["where", "can", "you", "buy", "a", "gold", "ring"]
lm = [(i + 1, w) for i, w in enumerate(question)]  # position 0 holds [cls]
surfaces = [(g.node(p.head).surface, g.node(p.tail).surface) for p in paths]
words = set(question) | {w for pair in surfaces for s in pair for w in s.split("_")}
emb = random_embeddings(words, dim=16)
# random vectors carry no meaning, but a word always matches itself best
mask = build_mask(surfaces, lm, n_lm=len(question) + 3, emb=emb)
# every LM word gets its nearest token; only "gold" and "ring" are real matches
print("\nomega1 links (LM word -> best KG token):")
for (r, c), slot in sorted(mask.cells.items()):
    if slot == OMEGA1 and c < mask.n_lm:
        print(f"  {question[c - 1]:6s} -> token {r - mask.n_lm} {surfaces[r - mask.n_lm]}")
