import numpy as np
import pytest

from pairmol.chem import Molecule2D, parse_smiles
from pairmol.data import Conformer3D, MoleculePair, generate_conformer


def dummy_molecule(n_atoms=1, mol_id="m", aromatic=None, element="C"):
    """Minimal chain molecule without chemistry semantics."""
    adj = np.zeros((n_atoms, n_atoms), dtype=np.int8)
    for i in range(n_atoms - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    flags = np.zeros(n_atoms, dtype=bool) if aromatic is None else np.asarray(aromatic)
    return Molecule2D(elements=[element] * n_atoms, adjacency=adj,
                      aromatic_flags=flags, id=mol_id,
                      heavy_map=np.arange(n_atoms))


def dummy_conformer(coords, mol_id="m", aromatic=None):
    coords = np.asarray(coords, dtype=float)
    return Conformer3D(dummy_molecule(len(coords), mol_id, aromatic), coords)


def dummy_pair(n1=4, n2=2, seed=0, label=None):
    rng = np.random.default_rng(seed)
    large = dummy_conformer(rng.normal(scale=2.0, size=(n1, 3)), mol_id=f"L{seed}")
    small = dummy_conformer(rng.normal(scale=1.0, size=(n2, 3)), mol_id=f"S{seed}")
    pair = MoleculePair(larger=large, smaller=small, label=label)
    pair.larger_2d = large.molecule
    pair.smaller_2d = small.molecule
    return pair


def smiles_pair(s1, s2, seed=0, label=None):
    m1, m2 = parse_smiles(s1), parse_smiles(s2)
    c1 = generate_conformer(m1, seed, use_cache=False)
    c2 = generate_conformer(m2, seed, use_cache=False)
    from pairmol.data import assign_roles
    larger, smaller = assign_roles(c1, c2)
    heavy = {c1.molecule.id: m1, c2.molecule.id: m2}
    return MoleculePair(larger=larger, smaller=smaller, label=label,
                        larger_2d=heavy[larger.molecule.id],
                        smaller_2d=heavy[smaller.molecule.id])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
