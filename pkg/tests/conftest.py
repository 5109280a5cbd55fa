import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from qat.data import graph_from_dict, load_dataset
from qat.graph import build_subgraph
from qat.matching import load_embeddings

settings.register_profile("qat", deadline=None, max_examples=60)
settings.load_profile("qat")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def graph3():
    with open(DATA / "graph3.json") as fh:
        return graph_from_dict(json.load(fh))


@pytest.fixture
def fixture3():
    return load_dataset(DATA / "fixture3.jsonl")


@pytest.fixture
def fixture_embeddings():
    return load_embeddings(DATA / "embeddings.txt")


def random_graph(rng, max_nodes=12, max_edges=30, num_relations=3, dim=3, with_z=False):
    """Random valid subgraph; returns it with a plain {id: type letter} map."""
    n = int(rng.integers(0, max_nodes + 1))
    types = list(rng.choice(["Q", "A", "O"], size=n))
    if with_z and n:
        types[int(rng.integers(n))] = "Z"
    nodes = [(i, t, f"w{i}", rng.standard_normal(dim).round(3)) for i, t in enumerate(types)]
    edges = []
    if n:
        for _ in range(int(rng.integers(0, max_edges + 1))):
            h, t = (int(x) for x in rng.integers(0, n, size=2))
            if h == t:
                continue
            edges.append((h, int(rng.integers(0, 2 * num_relations)), t))
    q = [i for i, t in enumerate(types) if t == "Q"]
    a = [i for i, t in enumerate(types) if t == "A"]
    g = build_subgraph(nodes, edges, num_relations, q, a)
    return g, dict(enumerate(types)), edges


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acc.RESULTS, key=lambda l: int(l.split()[1])):
        terminalreporter.write_line(line)
