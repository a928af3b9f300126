import numpy as np
import pytest

from morphnet.graph import NUM_LIMB_TYPES, Morphology


def random_tree(rng, K, types=None, name="tree"):
    parents = [int(rng.integers(0, i)) for i in range(1, K)]
    if types is None:
        types = [0] + [int(t) for t in rng.integers(1, NUM_LIMB_TYPES, size=K - 1)]
    return Morphology(name, K, tuple(types), tuple((p, i + 1) for i, p in enumerate(parents)), 0)


def random_connected(rng, K, extra=3, name="graph"):
    t = random_tree(rng, K, name=name)
    edges = set(t.edges)
    for _ in range(extra):
        i, j = sorted(int(x) for x in rng.choice(K, size=2, replace=False)) if K > 1 else (0, 0)
        if i != j:
            edges.add((i, j))
    return Morphology(name, K, t.limb_types, tuple(sorted(edges)), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance criteria report: one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
