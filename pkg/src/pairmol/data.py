"""Datasets of molecule pairs: parsing, conformers, pre-training pair
sampling and evaluation splits."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import chem
from .chem import ChemistryError, ConformerError, Molecule2D

logger = logging.getLogger(__name__)

__all__ = [
    "Conformer3D",
    "MoleculePair",
    "SplitSpec",
    "DatasetError",
    "SplitError",
    "load_pair_dataset",
    "generate_conformer",
    "assign_roles",
    "sample_pretrain_pairs",
    "make_splits",
    "molecule_radius",
]


class DatasetError(RuntimeError):
    pass


class SplitError(RuntimeError):
    pass


@dataclass
class Conformer3D:
    """One molecule plus its 3D coordinates (hydrogens included)."""

    molecule: Molecule2D
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.shape != (self.molecule.n_atoms, 3):
            raise ValueError(
                f"coords shape {self.coords.shape} does not match "
                f"{self.molecule.n_atoms} atoms")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite conformer coordinates")


@dataclass
class MoleculePair:
    """A (larger, smaller) conformer pair with an optional label.

    The heavy-atom graphs consumed by the 2D encoders are kept alongside
    the hydrogen-expanded conformers.
    """

    larger: Conformer3D
    smaller: Conformer3D
    label: float | None = None
    task_id: str = ""
    larger_2d: Molecule2D | None = None
    smaller_2d: Molecule2D | None = None


@dataclass
class SplitSpec:
    scheme: str
    train: list[int]
    valid: list[int]
    test: list[int]
    seed: int
    fold_index: int | None = None

    def __post_init__(self):
        tr, va, te = set(self.train), set(self.valid), set(self.test)
        if tr & va or tr & te or va & te:
            raise SplitError("overlapping split indices")


def molecule_radius(conf: Conformer3D) -> float:
    """Max distance of any atom from the coordinate centroid."""
    centroid = conf.coords.mean(axis=0)
    return float(np.linalg.norm(conf.coords - centroid, axis=1).max())


def _cache_dir(cache_dir: str | os.PathLike | None) -> Path:
    if cache_dir is not None:
        root = Path(cache_dir)
    else:
        root = Path(os.environ.get(
            "MRL_CACHE_DIR", Path.home() / ".cache" / "pairmol"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def generate_conformer(mol: Molecule2D, seed: int,
                       cache_dir: str | os.PathLike | None = None,
                       use_cache: bool = True) -> Conformer3D:
    """Embed ``mol`` in 3D with explicit hydrogens, caching to disk.

    The cache key is (canonical id, seed); cached geometries are stored as
    plain-text XYZ-style blocks with 6-decimal coordinates.
    """
    expanded = chem.add_hydrogens(mol) if mol.heavy_map is None else mol
    path = None
    if use_cache:
        key = f"{chem.molecule_hash(mol.id)}_{seed}.xyz"
        path = _cache_dir(cache_dir) / key
        if path.exists():
            return Conformer3D(expanded, _read_xyz(path, expanded.n_atoms))
    coords = chem.embed_conformer(expanded, seed)
    if path is not None:
        _write_xyz(path, expanded.elements, coords)
        coords = _read_xyz(path, expanded.n_atoms)
    return Conformer3D(expanded, coords)


def _write_xyz(path: Path, elements: list[str], coords: np.ndarray):
    lines = [f"{el} {x:.6f} {y:.6f} {z:.6f}"
             for el, (x, y, z) in zip(elements, coords)]
    path.write_text("\n".join(lines) + "\n")


def _read_xyz(path: Path, n_atoms: int) -> np.ndarray:
    rows = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if len(parts) == 4:
            rows.append([float(v) for v in parts[1:]])
    coords = np.array(rows)
    if coords.shape != (n_atoms, 3):
        raise DatasetError(f"corrupt conformer cache file {path}")
    return coords


def assign_roles(a: Conformer3D, b: Conformer3D) -> tuple[Conformer3D, Conformer3D]:
    """Order two conformers by radius; ties break on atom count then id."""
    ka = (molecule_radius(a), a.molecule.n_atoms)
    kb = (molecule_radius(b), b.molecule.n_atoms)
    if ka > kb:
        return a, b
    if kb > ka:
        return b, a
    return (a, b) if a.molecule.id <= b.molecule.id else (b, a)


def _pair_from_smiles(s1: str, s2: str, label: float | None, task_id: str,
                      seed: int, cache_dir=None) -> MoleculePair:
    m1 = chem.parse_smiles(s1)
    m2 = chem.parse_smiles(s2)
    c1 = generate_conformer(m1, seed, cache_dir=cache_dir)
    c2 = generate_conformer(m2, seed, cache_dir=cache_dir)
    larger, smaller = assign_roles(c1, c2)
    heavy = {c1.molecule.id: m1, c2.molecule.id: m2}
    return MoleculePair(
        larger=larger, smaller=smaller, label=label, task_id=task_id,
        larger_2d=heavy[larger.molecule.id],
        smaller_2d=heavy[smaller.molecule.id],
    )


def load_pair_dataset(path: str | os.PathLike, format: str = "csv-smiles",
                      seed: int = 0, cache_dir=None,
                      task_id: str = "") -> list[MoleculePair]:
    """Load molecule pairs from disk, skipping unparsable records.

    ``csv-smiles`` expects columns smiles_1, smiles_2 and optional label /
    temperature; ``sdf-pairs`` reads consecutive V2000 mol blocks as pairs.
    The skip count is logged and attached to the returned list as the
    attribute ``skip_count``.
    """
    path = Path(path)
    if not path.exists():
        raise OSError(f"dataset file not found: {path}")
    if format == "csv-smiles":
        pairs, skipped = _load_csv(path, seed, cache_dir, task_id)
    elif format == "sdf-pairs":
        pairs, skipped = _load_sdf(path, task_id)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    if not pairs:
        raise DatasetError(f"no parsable records in {path}")
    if skipped:
        logger.warning("skipped %d unparsable records in %s", skipped, path)
    out = _PairList(pairs)
    out.skip_count = skipped
    return out


class _PairList(list):
    """List of pairs carrying bookkeeping attributes."""

    skip_count: int = 0


def _load_csv(path: Path, seed: int, cache_dir, task_id):
    pairs, skipped = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        if not sample.strip():
            return [], 0
        delim = "\t" if "\t" in sample.splitlines()[0] else ","
        reader = csv.DictReader(fh, delimiter=delim)
        if reader.fieldnames is None:
            return [], 0
        cols = [c.strip().lower() for c in reader.fieldnames]
        def col(*names):
            for nm in names:
                if nm in cols:
                    return reader.fieldnames[cols.index(nm)]
            return None
        c1 = col("smiles_1", "smiles1", "drug1", "smiles_a")
        c2 = col("smiles_2", "smiles2", "drug2", "smiles_b")
        cl = col("label", "target", "y", "value")
        if c1 is None or c2 is None:
            raise DatasetError(f"missing smiles columns in {path}")
        for row in reader:
            try:
                label = float(row[cl]) if cl and row.get(cl) not in (None, "") else None
                pairs.append(_pair_from_smiles(
                    row[c1], row[c2], label, task_id, seed, cache_dir))
            except (ChemistryError, ConformerError, KeyError, TypeError) as exc:
                logger.debug("skipping row %r: %s", row, exc)
                skipped += 1
    return pairs, skipped


def _parse_molblock(block: str) -> Conformer3D:
    lines = block.splitlines()
    if len(lines) < 4:
        raise ChemistryError("truncated mol block")
    counts = lines[3]
    na, nb = int(counts[0:3]), int(counts[3:6])
    elements, coords = [], []
    for ln in lines[4:4 + na]:
        coords.append([float(ln[0:10]), float(ln[10:20]), float(ln[20:30])])
        elements.append(ln[31:34].strip())
    adj = np.zeros((na, na), dtype=np.int8)
    orders = np.zeros((na, na))
    for ln in lines[4 + na:4 + na + nb]:
        i, j, o = int(ln[0:3]) - 1, int(ln[3:6]) - 1, int(ln[6:9])
        adj[i, j] = adj[j, i] = 1
        orders[i, j] = orders[j, i] = 1.5 if o == 4 else float(o)
    name = lines[0].strip() or f"sdf-{hash(block) & 0xffffffff:x}"
    mol = Molecule2D(
        elements=elements, adjacency=adj,
        aromatic_flags=(orders == 1.5).any(axis=0),
        id=name, bond_orders=orders,
        heavy_map=np.arange(na),
    )
    return Conformer3D(mol, np.array(coords))


def _load_sdf(path: Path, task_id):
    text = path.read_text(encoding="utf-8")
    entries = [e for e in text.split("$$$$") if e.strip()]
    pairs, skipped = [], 0
    for k in range(0, len(entries) - 1, 2):
        try:
            a = _parse_molblock(entries[k].lstrip("\n"))
            b = _parse_molblock(entries[k + 1].lstrip("\n"))
            label = None
            m = entries[k + 1]
            if "<label>" in m:
                label = float(m.split("<label>")[1].splitlines()[1])
            larger, smaller = assign_roles(a, b)
            pairs.append(MoleculePair(
                larger=larger, smaller=smaller, label=label, task_id=task_id,
                larger_2d=larger.molecule, smaller_2d=smaller.molecule))
        except (ChemistryError, ValueError, IndexError) as exc:
            logger.debug("skipping SDF record %d: %s", k, exc)
            skipped += 1
    return pairs, skipped


def sample_pretrain_pairs(larger_set, smaller_set, fraction: float,
                          seed: int) -> list:
    """Uniform sample of floor(fraction * |A| * |B|) distinct cross pairs.

    Elements may be conformers or any lightweight stand-ins; roles follow
    the set designation (larger_set supplies the central molecule).
    Returns a list of (larger, smaller) picks or MoleculePair objects when
    both sides are conformers.
    """
    if not (0 < fraction <= 1):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not larger_set or not smaller_set:
        raise ValueError("both molecule sets must be non-empty")
    na, nb = len(larger_set), len(smaller_set)
    count = int(np.floor(fraction * na * nb))
    rng = np.random.default_rng(seed)
    flat = rng.choice(na * nb, size=count, replace=False)
    out = []
    for idx in flat:
        a, b = larger_set[idx // nb], smaller_set[idx % nb]
        if isinstance(a, Conformer3D) and isinstance(b, Conformer3D):
            out.append(MoleculePair(larger=a, smaller=b))
        else:
            out.append((a, b))
    return out


def _molecule_ids(pair: MoleculePair) -> tuple[str, str]:
    return pair.larger.molecule.id, pair.smaller.molecule.id


def make_splits(dataset: list, scheme: str, seed: int) -> list[SplitSpec]:
    """Evaluation splits: 5-fold CV or molecule/scaffold 60/20/20 splits."""
    if not dataset:
        raise SplitError("empty dataset")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if scheme == "kfold5":
        order = rng.permutation(n)
        folds = np.array_split(order, 5)
        specs = []
        for f, fold in enumerate(folds):
            # half the held-out fold becomes the validation set
            half = len(fold) // 2
            specs.append(SplitSpec(
                scheme=scheme,
                train=sorted(int(i) for i in order if i not in set(fold.tolist())),
                valid=sorted(int(i) for i in fold[:half]),
                test=sorted(int(i) for i in fold[half:]),
                seed=seed, fold_index=f))
        return specs
    if scheme in ("molecule", "scaffold"):
        if scheme == "molecule":
            def key(mol_id, mol):
                return mol_id
        else:
            def key(mol_id, mol):
                try:
                    return chem.scaffold_key(mol)
                except Exception as exc:
                    raise SplitError(f"scaffold uncomputable for {mol_id}") from exc
        groups: dict[str, None] = {}
        pair_keys = []
        for pair in dataset:
            ks = []
            for conf, mol2d in ((pair.larger, pair.larger_2d),
                                (pair.smaller, pair.smaller_2d)):
                k = key(conf.molecule.id, mol2d if mol2d is not None else conf.molecule)
                groups.setdefault(k, None)
                ks.append(k)
            pair_keys.append(tuple(ks))
        keys = list(groups)
        order = rng.permutation(len(keys))
        n_old = int(round(0.6 * len(keys)))
        n_val = int(round(0.2 * len(keys)))
        old = {keys[i] for i in order[:n_old]}
        val_new = {keys[i] for i in order[n_old:n_old + n_val]}
        test_new = {keys[i] for i in order[n_old + n_val:]}
        train, valid, test = [], [], []
        for idx, (k1, k2) in enumerate(pair_keys):
            if k1 in old and k2 in old:
                train.append(idx)
            elif scheme == "molecule" and (k1 in test_new or k2 in test_new):
                test.append(idx)
            elif (scheme == "scaffold" and k1 not in old and k2 not in old
                    and (k1 in test_new or k2 in test_new)):
                # scaffold scheme is stricter: a test pair may not carry any
                # scaffold that also occurs in training
                test.append(idx)
            else:
                valid.append(idx)
        return [SplitSpec(scheme=scheme, train=train, valid=valid,
                          test=test, seed=seed)]
    raise ValueError(f"unknown split scheme {scheme!r}")
