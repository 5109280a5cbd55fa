"""Slow, deliberately naive reference implementations.

None of these import the code under test beyond plain data containers; they
recompute everything with Python loops so that disagreements point at the
library, not at shared helpers.
"""

from __future__ import annotations

import itertools
import math


# -- path enumeration --------------------------------------------------------

def doubled_edge_set(nodes, edges, num_relations):
    """{(head, rel, tail)} with inverses; the context id 2R is its own inverse."""
    out = set()
    for h, r, t in edges:
        out.add((h, r, t))
        if r == 2 * num_relations:
            inv = r
        elif r < num_relations:
            inv = r + num_relations
        else:
            inv = r - num_relations
        out.add((t, inv, h))
    return out


def brute_force_paths(node_types, edges, num_relations, q_nodes, a_nodes, max_hops):
    """Every 1-hop doubled edge plus every simple path of 2..max_hops hops
    with one question and one answer endpoint, found by trying every
    ordered node tuple. Returns a set of (node tuple, relation tuple)."""
    dbl = doubled_edge_set(node_types, edges, num_relations)
    rels_between = {}
    for h, r, t in dbl:
        rels_between.setdefault((h, t), []).append(r)
    out = {((h, t), (r,)) for h, r, t in dbl}
    ids = sorted(node_types)
    q, a = set(q_nodes), set(a_nodes)
    for k in range(2, max_hops + 1):
        for seq in itertools.permutations(ids, k + 1):
            head, tail = seq[0], seq[-1]
            if not ((head in q and tail in a) or (head in a and tail in q)):
                continue
            if any(node_types[v] == "Z" for v in seq):
                continue
            options = [rels_between.get((seq[i], seq[i + 1]), []) for i in range(k)]
            for combo in itertools.product(*options):
                out.add((tuple(seq), tuple(combo)))
    return out


# -- cross-modal mask ---------------------------------------------------------

def _avg(words, emb, dim):
    known = [emb[w] for w in words if w in emb]
    if not known:
        return [0.0] * dim
    return [sum(v[i] for v in known) / len(known) for i in range(dim)]


def _cos(u, v):
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0 or nv == 0:
        return None
    return sum(x * y for x, y in zip(u, v)) / (nu * nv)


def mask_oracle(kg_surfaces, lm_tokens, n_lm, emb, dim, tol=1e-12):
    """Exhaustive argmax; anything within ``tol`` of the best counts as a
    tie and the lowest index wins.

    Returns {(row, col): 1 | 2} (1 = omega1 slot, 2 = omega2 slot).
    """
    cells = {}
    lm_vecs = [emb.get(w, [0.0] * dim) for _, w in lm_tokens]
    kg_vecs = [[_avg([w for w in s.split("_") if w], emb, dim) for s in pair] for pair in kg_surfaces]

    for j, ends in enumerate(kg_vecs):
        for end in ends:
            sims = [_cos(end, lv) for lv in lm_vecs]
            i = _first_within(sims, tol)
            if i is not None:
                cells[(lm_tokens[i][0], n_lm + j)] = 2

    for i, lv in enumerate(lm_vecs):
        per_token = []
        for ends in kg_vecs:
            s = [c for c in (_cos(end, lv) for end in ends) if c is not None]
            per_token.append(max(s) if s else None)
        j = _first_within(per_token, tol)
        if j is not None:
            cells[(n_lm + j, lm_tokens[i][0])] = 1
    return cells


def _first_within(sims, tol):
    valid = [s for s in sims if s is not None]
    if not valid:
        return None
    top = max(valid)
    for i, s in enumerate(sims):
        if s is not None and s >= top - tol:
            return i


# -- one attention layer ------------------------------------------------------

def _ln(row, gain, bias, eps):
    n = len(row)
    mu = sum(row) / n
    var = sum((x - mu) ** 2 for x in row) / n
    return [(x - mu) / math.sqrt(var + eps) * g + b for x, g, b in zip(row, gain, bias)]


def _affine(row, w, b=None):
    out = []
    for j in range(len(w[0])):
        s = sum(row[i] * w[i][j] for i in range(len(row)))
        out.append(s + (b[j] if b is not None else 0.0))
    return out


def _gelu(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def single_head_layer(x, modality, p, omega, eps=1e-5):
    """Pre-norm layer with one head, dense loops everywhere.

    ``x``: list of rows; ``modality``: list of 0/1; ``p``: dict of nested
    lists; ``omega``: n x n list of additive biases. Returns (rows, weights).
    """
    n = len(x)
    d = len(x[0])
    h = [_ln(r, p["ln1_gain"], p["ln1_bias"], eps) for r in x]
    hq = [[h[i][c] + p["modality"][modality[i]][c] for c in range(d)] for i in range(n)]
    q = [_affine(r, p["wq"]) for r in hq]
    k = [_affine(r, p["wk"]) for r in hq]
    v = [_affine(r, p["wv"]) for r in h]
    weights = []
    att = []
    for i in range(n):
        logits = [sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d) + omega[i][j] for j in range(n)]
        m = max(logits)
        ex = [math.exp(s - m) for s in logits]
        tot = sum(ex)
        w = [e / tot for e in ex]
        weights.append(w)
        att.append([sum(w[j] * v[j][c] for j in range(n)) for c in range(d)])
    proj = [_affine(r, p["out_w"], p["out_b"]) for r in att]
    z_hat = [[proj[i][c] + x[i][c] for c in range(d)] for i in range(n)]
    z = []
    for r in z_hat:
        g = _ln(r, p["ln2_gain"], p["ln2_bias"], eps)
        hid = [_gelu(t) for t in _affine(g, p["fc1_w"], p["fc1_b"])]
        f = _affine(hid, p["fc2_w"], p["fc2_b"])
        z.append([f[c] + r[c] for c in range(d)])
    return z, weights
