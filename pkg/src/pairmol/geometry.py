"""Virtual interaction environments: replica placement around target atoms,
pseudo-force targets and local-frame math for the equivariant force head.

All operations are float64 numpy and pure given an explicit seeded
generator. Frames are built from replica-local coordinates (origin at the
replica's assigned target atom) so that translations of the whole scene
leave frames and projections unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Conformer3D, MoleculePair, molecule_radius

__all__ = [
    "VirtualGeometry",
    "LocalFrame",
    "DegenerateGeometryError",
    "select_target_atoms",
    "sample_rotation",
    "place_replica",
    "build_virtual_geometry",
    "pseudo_force_targets",
    "local_frame",
    "frame_projection",
    "export_geometry",
]

FRAME_EPS = 1e-8
FORCE_EPS = 1e-9


class DegenerateGeometryError(RuntimeError):
    pass


@dataclass
class VirtualGeometry:
    """Assembled environment: larger molecule plus n placed replicas."""

    coords: np.ndarray              # (N1 + n_rep * N2) x 3
    atom_features: np.ndarray       # (N1 + n_rep * N2) x F
    target_atoms: np.ndarray        # n_rep indices into the larger molecule
    replica_slices: list[tuple[int, int]]
    pseudo_forces: np.ndarray       # n_rep x N2 x 3 unit vectors
    epsilons: np.ndarray            # n_rep x 3 unit vectors
    rotations: np.ndarray           # n_rep x 3 x 3
    seed: int
    n_larger: int

    @property
    def n_replicas(self) -> int:
        return len(self.replica_slices)

    @property
    def replica_size(self) -> int:
        a, b = self.replica_slices[0]
        return b - a

    def replica_coords(self, i: int) -> np.ndarray:
        a, b = self.replica_slices[i]
        return self.coords[a:b]

    def replica_local_coords(self, i: int) -> np.ndarray:
        """Replica coordinates relative to the assigned target atom."""
        return self.replica_coords(i) - self.coords[self.target_atoms[i]]


@dataclass
class LocalFrame:
    axes: np.ndarray                # 3 x 3, rows are the axes
    degenerate_fallback_used: bool = False


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def select_target_atoms(mol, n: int, rng) -> np.ndarray:
    """Sample n target-atom indices, preferring non-aromatic atoms.

    Fewer than n non-aromatic atoms: sample them with replacement. None at
    all: fall back to the full atom set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _as_rng(rng)
    candidates = np.nonzero(~np.asarray(mol.aromatic_flags))[0]
    if len(candidates) == 0:
        candidates = np.arange(mol.n_atoms)
    replace = len(candidates) < n
    return np.asarray(rng.choice(candidates, size=n, replace=replace))


def sample_rotation(rng) -> np.ndarray:
    """Uniform SO(3) rotation via a normalized quaternion."""
    rng = _as_rng(rng)
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def place_replica(small: Conformer3D, target_pos, rng,
                  eps=None, rotation=None):
    """Place one copy of the smaller molecule near ``target_pos``.

    Coordinates are centered at their centroid, rotated by a uniform random
    rotation, then shifted by a unit random direction scaled by the
    molecule radius plus the target position. The returned centroid is
    exactly target_pos + eps * r2. ``eps`` and ``rotation`` can be forced
    for reproducibility checks; ``eps`` is renormalized.
    """
    rng = _as_rng(rng)
    target_pos = np.asarray(target_pos, dtype=float)
    if eps is None:
        eps = rng.normal(size=3)
    eps = np.asarray(eps, dtype=float)
    eps = eps / np.linalg.norm(eps)
    rot = sample_rotation(rng) if rotation is None else np.asarray(rotation, dtype=float)
    centered = small.coords - small.coords.mean(axis=0)
    r2 = molecule_radius(small)
    coords = centered @ rot.T + eps * r2 + target_pos
    return coords, eps, rot


def build_virtual_geometry(pair: MoleculePair, n: int, rng,
                           replicas_per_atom: int = 1) -> VirtualGeometry:
    """Assemble the full environment for one pair (fresh per epoch).

    ``rng`` may be an int seed (recorded) or a Generator (seed recorded
    as -1). Replica coordinate blocks follow the larger molecule's rows.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if replicas_per_atom < 1:
        raise ValueError("replicas_per_atom must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else -1
    rng = _as_rng(rng)
    larger, smaller = pair.larger, pair.smaller
    targets = select_target_atoms(larger.molecule, n, rng)
    targets = np.repeat(targets, replicas_per_atom)
    n1 = larger.molecule.n_atoms
    n2 = smaller.molecule.n_atoms
    blocks, epsilons, rotations, slices = [], [], [], []
    offset = n1
    for t in targets:
        coords, eps, rot = place_replica(smaller, larger.coords[t], rng)
        blocks.append(coords)
        epsilons.append(eps)
        rotations.append(rot)
        slices.append((offset, offset + n2))
        offset += n2
    coords = np.vstack([larger.coords] + blocks)
    feats = np.vstack(
        [larger.molecule.atom_features]
        + [smaller.molecule.atom_features] * len(targets))
    vg = VirtualGeometry(
        coords=coords, atom_features=feats, target_atoms=targets,
        replica_slices=slices,
        pseudo_forces=np.zeros((len(targets), n2, 3)),
        epsilons=np.array(epsilons), rotations=np.array(rotations),
        seed=int(seed), n_larger=n1)
    vg.pseudo_forces = pseudo_force_targets(vg)
    return vg


def pseudo_force_targets(vg: VirtualGeometry) -> np.ndarray:
    """Unit directions from each replica's target atom to its atoms."""
    out = np.zeros((vg.n_replicas, vg.replica_size, 3))
    for i in range(vg.n_replicas):
        diff = vg.replica_local_coords(i)
        norms = np.linalg.norm(diff, axis=1)
        bad = np.nonzero(norms < FORCE_EPS)[0]
        if len(bad):
            raise DegenerateGeometryError(
                f"replica {i} atom {int(bad[0])} coincides with target atom")
        out[i] = diff / norms[:, None]
    return out


def _fallback_frame(d: np.ndarray) -> np.ndarray:
    """Deterministic right-handed frame from one (possibly zero) direction."""
    if np.linalg.norm(d) < FRAME_EPS:
        return np.eye(3)
    e1 = d / np.linalg.norm(d)
    # Gram-Schmidt against the least-aligned canonical axis
    pick = np.argmin(np.abs(e1))
    v = np.zeros(3)
    v[pick] = 1.0
    e2 = v - e1 * (e1 @ v)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3])


def local_frame(r_k, r_l) -> LocalFrame:
    """Right-handed orthonormal frame from two replica-local positions."""
    r_k = np.asarray(r_k, dtype=float)
    r_l = np.asarray(r_l, dtype=float)
    d = r_k - r_l
    c = np.cross(r_k, r_l)
    nd, nc = np.linalg.norm(d), np.linalg.norm(c)
    if nd < FRAME_EPS or nc < FRAME_EPS:
        return LocalFrame(_fallback_frame(d), degenerate_fallback_used=True)
    e1 = d / nd
    e2 = c / nc
    e3 = np.cross(e1, e2)
    return LocalFrame(np.stack([e1, e2, e3]))


def frame_projection(frame: LocalFrame, r_k, r_l) -> np.ndarray:
    """Both positions expressed in frame coordinates, concatenated."""
    r_k = np.asarray(r_k, dtype=float)
    r_l = np.asarray(r_l, dtype=float)
    return np.concatenate([frame.axes @ r_k, frame.axes @ r_l])


def export_geometry(vg: VirtualGeometry, elements: list[str],
                    xyz_path, json_path) -> None:
    """Write the environment as extended XYZ plus a JSON sidecar."""
    xyz_path, json_path = Path(xyz_path), Path(json_path)
    lines = [str(len(vg.coords)),
             f"n={vg.n_replicas} seed={vg.seed} "
             f"targets={','.join(map(str, vg.target_atoms.tolist()))}"]
    for el, (x, y, z) in zip(elements, vg.coords):
        lines.append(f"{el} {x:.6f} {y:.6f} {z:.6f}")
    xyz_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "seed": vg.seed,
        "target_atoms": vg.target_atoms.tolist(),
        "replica_slices": [list(s) for s in vg.replica_slices],
        "epsilons": np.round(vg.epsilons, 6).tolist(),
        "rotations": np.round(vg.rotations, 6).tolist(),
        "pseudo_forces": np.round(vg.pseudo_forces, 6).tolist(),
    }
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n")
