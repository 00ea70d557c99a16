import numpy as np
import pytest

from pgfn.chemgraph import FragmentType, FragmentVocab, PartialMol, attach


@pytest.fixture
def vocab3():
    """Three fragments, arities (2, 2, 3); the enumerable test vocabulary."""
    return FragmentVocab(
        (
            FragmentType(0, "A", 2),
            FragmentType(1, "B", 2),
            FragmentType(2, "C", 3),
        ),
        version="test3",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_tree(vocab, n_nodes, rng):
    """Build a random molecule by uniform random attachment."""
    mol = PartialMol.empty(vocab)
    mol = attach(mol, None, int(rng.integers(len(vocab))))
    while mol.n_nodes < n_nodes:
        stems = mol.open_stems
        if not stems:
            break
        stem = stems[int(rng.integers(len(stems)))]
        mol = attach(mol, stem, int(rng.integers(len(vocab))))
    return mol
