import json
from pathlib import Path

import numpy as np
import pytest

import logicdiag as ld

FIXTURES = Path(__file__).parent / "fixtures"

PAPER_HIERARCHIES = ["pascal_voc.json", "cityscapes.json", "coco.json"]


def load_fixture(name: str) -> str:
    return (FIXTURES / name).read_text()


@pytest.fixture(scope="session")
def h3_text() -> str:
    return load_fixture("h3.json")


@pytest.fixture(scope="session")
def h3(h3_text) -> ld.LabelHierarchy:
    return ld.parse_hierarchy(h3_text)


@pytest.fixture(scope="session")
def h3_rules(h3) -> ld.GroundRuleSet:
    return ld.compile_rules(h3)


def random_tree_text(rng: np.random.Generator, max_nodes: int = 12) -> str:
    """Random uniform-depth tree as hierarchy-file JSON, <= max_nodes nodes."""
    levels = int(rng.integers(2, 5))
    sizes = [1]
    for _ in range(levels - 1):
        lo = sizes[-1]
        hi = min(3 * sizes[-1], max_nodes - sum(sizes) - (levels - 1 - len(sizes)) * lo)
        hi = max(hi, lo)
        sizes.append(int(rng.integers(lo, hi + 1)))
        if sum(sizes) >= max_nodes:
            break
    counter = [0]

    def fresh_name() -> str:
        counter[0] += 1
        return f"n{counter[0] - 1}"

    layers = [[{"name": fresh_name()}]]
    for size in sizes[1:]:
        parents = layers[-1]
        # one child per parent first, remaining children to random parents
        assignment = list(range(len(parents))) + [
            int(rng.integers(len(parents))) for _ in range(size - len(parents))
        ]
        layer = []
        for pi in assignment:
            child = {"name": fresh_name()}
            parents[pi].setdefault("children", []).append(child)
            layer.append(child)
        layers.append(layer)
    return json.dumps(layers[0][0])


def random_assignment(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.random(n) < rng.uniform(0.15, 0.7)
