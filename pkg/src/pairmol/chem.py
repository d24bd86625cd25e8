"""Cheminformatics adapter: SMILES parsing, hydrogen expansion, scaffolds,
and deterministic conformer embedding.

Everything outside this module is toolkit-independent. The parser covers the
organic subset plus bracket atoms, ring closures and branches; aromaticity is
taken from the aromatic (lowercase) notation. Conformers are embedded by
minimizing a harmonic distance-target objective, which is cheap, deterministic
per seed, and produces bond lengths from covalent radii.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.optimize import minimize

__all__ = [
    "Molecule2D",
    "ChemistryError",
    "ConformerError",
    "parse_smiles",
    "add_hydrogens",
    "atom_features",
    "scaffold_key",
    "embed_conformer",
    "FEATURE_DIM",
]


class ChemistryError(ValueError):
    """Raised when a molecule string cannot be parsed."""


class ConformerError(RuntimeError):
    """Raised when 3D embedding fails for a molecule."""

    def __init__(self, molecule_id: str, reason: str = "embedding failed"):
        super().__init__(f"{reason} for molecule {molecule_id!r}")
        self.molecule_id = molecule_id


COVALENT_RADII = {
    "H": 0.31, "B": 0.84, "C": 0.76, "N": 0.71, "O": 0.66, "F": 0.57,
    "Si": 1.11, "P": 1.07, "S": 1.05, "Cl": 1.02, "Se": 1.20, "Br": 1.20,
    "I": 1.39,
}
_DEFAULT_RADIUS = 1.0

# Default valences for implicit-hydrogen filling (organic subset).
_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
            "F": 1, "Cl": 1, "Br": 1, "I": 1}

_KNOWN_ELEMENTS = set(COVALENT_RADII) | {
    "He", "Ne", "Ar", "Kr", "Xe", "Li", "Na", "K", "Ca", "Mg", "Al",
    "Zn", "Fe", "Cu", "Mn", "Co", "Ni", "As", "Sn", "Sb", "Te",
}

_ELEMENTS = ["H", "B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"]
# one-hot elements (+other) + degree + charge + aromatic + h-count
FEATURE_DIM = len(_ELEMENTS) + 1 + 4


@dataclass
class Molecule2D:
    """2D molecular graph: atoms, binary adjacency and aromaticity flags.

    ``heavy_map`` is present on hydrogen-expanded molecules and maps every
    atom (including explicit hydrogens) to the index of its heavy parent.
    """

    elements: list[str]
    adjacency: np.ndarray
    aromatic_flags: np.ndarray
    id: str
    bond_orders: np.ndarray | None = None
    charges: np.ndarray | None = None
    h_counts: np.ndarray | None = None
    heavy_map: np.ndarray | None = None
    _features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.elements)
        if n < 1:
            raise ChemistryError("molecule has no atoms")
        self.adjacency = np.asarray(self.adjacency)
        assert self.adjacency.shape == (n, n)
        assert np.array_equal(self.adjacency, self.adjacency.T)
        assert not self.adjacency.diagonal().any()
        self.aromatic_flags = np.asarray(self.aromatic_flags, dtype=bool)
        assert self.aromatic_flags.shape == (n,)
        if self.charges is None:
            self.charges = np.zeros(n, dtype=int)
        if self.h_counts is None:
            self.h_counts = np.zeros(n, dtype=int)

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    @property
    def atom_features(self) -> np.ndarray:
        if self._features is None:
            self._features = atom_features(self)
        return self._features


_TOKEN = re.compile(
    r"Cl|Br|\[[^\]]+\]|[BCNOPSFI]|[bcnops]|[-=#:/\\.()%]|\d"
)
_BRACKET = re.compile(
    r"\[(?P<iso>\d+)?(?P<sym>[A-Z][a-z]?|[bcnops]|se)(?P<chiral>@{1,2})?"
    r"(?P<h>H\d*)?(?P<chg>[+-]\d*|[+-]+)?(?::\d+)?\]"
)


def parse_smiles(smiles: str, mol_id: str | None = None) -> Molecule2D:
    """Parse a SMILES string into a heavy-atom :class:`Molecule2D`.

    Multi-fragment inputs keep the largest connected fragment. Hydrogen
    counts are stored per atom, not as graph nodes; use
    :func:`add_hydrogens` to expand them.
    """
    if not smiles or not smiles.strip():
        raise ChemistryError("empty SMILES")
    smiles = smiles.strip()
    tokens = _TOKEN.findall(smiles)
    if "".join(tokens) != smiles:
        raise ChemistryError(f"unrecognized characters in SMILES {smiles!r}")

    elements: list[str] = []
    aromatic: list[bool] = []
    charges: list[int] = []
    explicit_h: list[int | None] = []
    bonds: list[tuple[int, int, float]] = []

    prev: int | None = None
    pending: float | None = None
    stack: list[int | None] = []
    ring_open: dict[str, tuple[int, float | None]] = {}

    def add_bond(a: int, b: int, order: float | None):
        if a == b:
            raise ChemistryError("self-bond in SMILES")
        if order is None:
            order = 1.5 if aromatic[a] and aromatic[b] else 1.0
        bonds.append((a, b, order))

    for tok in tokens:
        if tok in "-/\\":
            pending = 1.0
        elif tok == "=":
            pending = 2.0
        elif tok == "#":
            pending = 3.0
        elif tok == ":":
            pending = 1.5
        elif tok == "(":
            stack.append(prev)
        elif tok == ")":
            if not stack:
                raise ChemistryError("unbalanced parentheses")
            prev = stack.pop()
        elif tok == ".":
            prev = None
            pending = None
        elif tok.isdigit() or tok.startswith("%"):
            key = tok.lstrip("%")
            if prev is None:
                raise ChemistryError("ring closure before any atom")
            if key in ring_open:
                other, order0 = ring_open.pop(key)
                add_bond(prev, other, pending or order0)
            else:
                ring_open[key] = (prev, pending)
            pending = None
        else:
            if tok.startswith("["):
                m = _BRACKET.fullmatch(tok)
                if not m:
                    raise ChemistryError(f"bad bracket atom {tok!r}")
                sym = m.group("sym")
                arom = sym[0].islower()
                elem = sym.capitalize() if arom else sym
                if elem not in _KNOWN_ELEMENTS:
                    raise ChemistryError(f"unknown element {elem!r}")
                h = m.group("h")
                nh = 0 if h is None else (1 if h == "H" else int(h[1:]))
                chg_s = m.group("chg")
                if not chg_s:
                    chg = 0
                elif chg_s in ("+", "-"):
                    chg = 1 if chg_s == "+" else -1
                elif set(chg_s) <= {"+", "-"}:
                    chg = chg_s.count("+") - chg_s.count("-")
                else:
                    chg = int(chg_s[1:]) * (1 if chg_s[0] == "+" else -1)
                idx = len(elements)
                elements.append(elem)
                aromatic.append(arom)
                charges.append(chg)
                explicit_h.append(nh)
            else:
                arom = tok.islower()
                idx = len(elements)
                elements.append(tok.capitalize() if arom else tok)
                aromatic.append(arom)
                charges.append(0)
                explicit_h.append(None)
            if prev is not None:
                add_bond(prev, idx, pending)
            prev = idx
            pending = None

    if stack:
        raise ChemistryError("unbalanced parentheses")
    if ring_open:
        raise ChemistryError(f"unclosed ring bonds {sorted(ring_open)}")
    if not elements:
        raise ChemistryError(f"no atoms in SMILES {smiles!r}")

    n = len(elements)
    adj = np.zeros((n, n), dtype=np.int8)
    orders = np.zeros((n, n))
    for a, b, o in bonds:
        if adj[a, b]:
            raise ChemistryError("duplicate bond in SMILES")
        adj[a, b] = adj[b, a] = 1
        orders[a, b] = orders[b, a] = o

    # Largest connected fragment.
    g = nx.from_numpy_array(adj)
    comp = max(nx.connected_components(g), key=len)
    if len(comp) < n:
        keep = sorted(comp)
        sel = np.array(keep)
        adj = adj[np.ix_(sel, sel)]
        orders = orders[np.ix_(sel, sel)]
        elements = [elements[i] for i in keep]
        aromatic = [aromatic[i] for i in keep]
        charges = [charges[i] for i in keep]
        explicit_h = [explicit_h[i] for i in keep]
        n = len(keep)

    h_counts = np.zeros(n, dtype=int)
    for i in range(n):
        if explicit_h[i] is not None:
            h_counts[i] = explicit_h[i]
            continue
        val = _VALENCE.get(elements[i])
        if val is None:
            h_counts[i] = 0
            continue
        used = int(np.ceil(orders[i].sum() - 1e-9))
        h_counts[i] = max(0, val - used + charges[i] * (1 if elements[i] in ("N", "P") else 0))

    return Molecule2D(
        elements=elements,
        adjacency=adj,
        aromatic_flags=np.array(aromatic, dtype=bool),
        id=mol_id if mol_id is not None else smiles,
        bond_orders=orders,
        charges=np.array(charges),
        h_counts=h_counts,
    )


def add_hydrogens(mol: Molecule2D) -> Molecule2D:
    """Expand stored hydrogen counts into explicit hydrogen atoms."""
    n = mol.n_atoms
    total_h = int(mol.h_counts.sum())
    m = n + total_h
    adj = np.zeros((m, m), dtype=np.int8)
    adj[:n, :n] = mol.adjacency
    orders = np.zeros((m, m))
    if mol.bond_orders is not None:
        orders[:n, :n] = mol.bond_orders
    elements = list(mol.elements)
    heavy_map = list(range(n))
    k = n
    for i in range(n):
        for _ in range(int(mol.h_counts[i])):
            elements.append("H")
            adj[i, k] = adj[k, i] = 1
            orders[i, k] = orders[k, i] = 1.0
            heavy_map.append(i)
            k += 1
    return Molecule2D(
        elements=elements,
        adjacency=adj,
        aromatic_flags=np.concatenate(
            [mol.aromatic_flags, np.zeros(total_h, dtype=bool)]),
        id=mol.id,
        bond_orders=orders,
        charges=np.concatenate([mol.charges, np.zeros(total_h, dtype=int)]),
        h_counts=np.zeros(m, dtype=int),
        heavy_map=np.array(heavy_map),
    )


def atom_features(mol: Molecule2D) -> np.ndarray:
    """Per-atom descriptor matrix, N x FEATURE_DIM, float32."""
    n = mol.n_atoms
    feats = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    degree = mol.adjacency.sum(axis=1)
    for i, el in enumerate(mol.elements):
        j = _ELEMENTS.index(el) if el in _ELEMENTS else len(_ELEMENTS)
        feats[i, j] = 1.0
        base = len(_ELEMENTS) + 1
        feats[i, base] = degree[i] / 4.0
        feats[i, base + 1] = float(mol.charges[i])
        feats[i, base + 2] = float(mol.aromatic_flags[i])
        feats[i, base + 3] = mol.h_counts[i] / 4.0
    return feats


def scaffold_key(mol: Molecule2D) -> str:
    """Bemis-Murcko style scaffold string: ring systems plus linkers.

    Side chains are pruned by repeatedly deleting degree-1 atoms; the
    remaining subgraph is hashed with element/aromaticity labels. Fully
    acyclic molecules all map to the sentinel key ``"acyclic"``.
    """
    heavy = [i for i, el in enumerate(mol.elements) if el != "H"]
    g = nx.Graph()
    for i in heavy:
        g.add_node(i, label=f"{mol.elements[i]}{int(mol.aromatic_flags[i])}")
    a, b = np.nonzero(mol.adjacency)
    for i, j in zip(a, b):
        if i < j and i in g and j in g:
            g.add_edge(int(i), int(j))
    while True:
        leaves = [v for v in g if g.degree(v) <= 1]
        if not leaves:
            break
        g.remove_nodes_from(leaves)
        if g.number_of_nodes() == 0:
            return "acyclic"
    return nx.weisfeiler_lehman_graph_hash(g, node_attr="label", iterations=3)


def _distance_targets(mol: Molecule2D):
    """Bonded and angle-based (1-3) distance targets for embedding."""
    n = mol.n_atoms
    radii = np.array([COVALENT_RADII.get(e, _DEFAULT_RADIUS)
                      for e in mol.elements])
    pairs, targets, weights = [], [], []
    a, b = np.nonzero(np.triu(mol.adjacency))
    bond_len = {}
    for i, j in zip(a, b):
        t = radii[i] + radii[j]
        if mol.bond_orders is not None:
            o = mol.bond_orders[i, j]
            if o >= 3:
                t *= 0.81
            elif o >= 2:
                t *= 0.87
            elif o >= 1.5:
                t *= 0.93
        pairs.append((int(i), int(j)))
        targets.append(t)
        weights.append(10.0)
        bond_len[(int(i), int(j))] = t
        bond_len[(int(j), int(i))] = t
    neigh = [np.nonzero(mol.adjacency[i])[0] for i in range(n)]
    for c in range(n):
        theta = np.deg2rad(120.0 if mol.aromatic_flags[c] else 109.47)
        nb = neigh[c]
        for x in range(len(nb)):
            for y in range(x + 1, len(nb)):
                i, j = int(nb[x]), int(nb[y])
                l1, l2 = bond_len[(c, i)], bond_len[(c, j)]
                t = np.sqrt(l1 * l1 + l2 * l2 - 2 * l1 * l2 * np.cos(theta))
                pairs.append((i, j))
                targets.append(t)
                weights.append(3.0)
    return np.array(pairs, dtype=int).reshape(-1, 2), np.array(targets), np.array(weights)


def embed_conformer(mol: Molecule2D, seed: int, max_retries: int = 5) -> np.ndarray:
    """Deterministic 3D embedding of ``mol``; returns N x 3 coordinates (A).

    Minimizes harmonic restraints toward covalent bond lengths and ideal
    1-3 distances, plus a soft repulsion between non-bonded atoms. Retries
    with derived seeds on failure; raises :class:`ConformerError` after
    ``max_retries`` attempts.
    """
    n = mol.n_atoms
    if n == 1:
        return np.zeros((1, 3))
    pairs, targets, weights = _distance_targets(mol)
    restrained = {tuple(p) for p in pairs.tolist()}
    rep_pairs = np.array(
        [(i, j) for i in range(n) for j in range(i + 1, n)
         if (i, j) not in restrained],
        dtype=int,
    ).reshape(-1, 2)
    rep_min = np.full(len(rep_pairs), 2.2)
    for k, (i, j) in enumerate(rep_pairs):
        if mol.elements[i] == "H" or mol.elements[j] == "H":
            rep_min[k] = 1.7

    ii, jj = pairs[:, 0], pairs[:, 1]
    ri, rj = rep_pairs[:, 0] if len(rep_pairs) else np.array([], dtype=int), \
        rep_pairs[:, 1] if len(rep_pairs) else np.array([], dtype=int)

    def objective(x):
        coords = x.reshape(n, 3)
        grad = np.zeros_like(coords)
        d = coords[ii] - coords[jj]
        dist = np.linalg.norm(d, axis=1) + 1e-12
        diff = dist - targets
        val = np.sum(weights * diff ** 2)
        g = (2 * weights * diff / dist)[:, None] * d
        np.add.at(grad, ii, g)
        np.add.at(grad, jj, -g)
        if len(rep_pairs):
            dr = coords[ri] - coords[rj]
            distr = np.linalg.norm(dr, axis=1) + 1e-12
            viol = np.minimum(distr - rep_min, 0.0)
            val += np.sum(viol ** 2)
            gr = (2 * viol / distr)[:, None] * dr
            np.add.at(grad, ri, gr)
            np.add.at(grad, rj, -gr)
        return val, grad.ravel()

    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt, n])
        x0 = rng.normal(scale=0.5 + 0.35 * n ** (1 / 3), size=n * 3)
        res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 500})
        coords = res.x.reshape(n, 3)
        if np.all(np.isfinite(coords)):
            d = coords[ii] - coords[jj]
            dist = np.linalg.norm(d, axis=1)
            bond_sel = weights >= 10.0
            rel = np.abs(dist[bond_sel] - targets[bond_sel]) / targets[bond_sel]
            if rel.max(initial=0.0) < 0.15:
                coords -= coords.mean(axis=0)
                return np.round(coords, 6)
    raise ConformerError(mol.id)


def molecule_hash(mol_id: str) -> str:
    """Stable filesystem-safe key for a molecule id."""
    return hashlib.sha256(mol_id.encode()).hexdigest()[:16]
