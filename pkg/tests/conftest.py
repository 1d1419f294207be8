import numpy as np
import pytest

from msds.geometry import GridConfig, SpatialSet, zorder_encode
from msds.oracle import unit_grid


def mkset(dataset_id, coords, grid):
    """SpatialSet from explicit (col, row) cell coordinates."""
    return SpatialSet.from_cells(dataset_id, [zorder_encode(c, r) for c, r in coords], grid)


@pytest.fixture
def grid4():
    return unit_grid(4)


@pytest.fixture
def grid6():
    return unit_grid(6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def check_tree(tree):
    """Assert every structural invariant of an IBtree."""
    from msds.geometry import rect_contains

    seen = set()
    for node in tree.iter_nodes():
        if node.parent is not None:
            assert rect_contains(node.parent.rect, node.rect)
            assert node in node.parent.children
        else:
            assert node is tree.root
        if node.is_leaf:
            assert 1 <= len(node.children) <= tree.f
            expected = {}
            for child in node.children:
                assert child.parent is node
                assert rect_contains(node.rect, child.rect)
                assert child.id not in seen
                seen.add(child.id)
                for c in child.set.cell_list():
                    expected.setdefault(c, set()).add(child.id)
            assert {c: set(pl) for c, pl in node.inv.items()} == expected
            for pl in node.inv.values():
                assert len(pl) == len(set(pl))
        else:
            assert node.left is not None and node.right is not None
            assert node.radius >= 0.5 * ((node.rect[2] - node.rect[0]) ** 2 + (node.rect[3] - node.rect[1]) ** 2) ** 0.5
    assert seen == set(tree.directory)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
