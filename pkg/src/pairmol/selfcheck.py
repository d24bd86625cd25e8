"""Structural property suite runnable from the CLI: frame math,
equivariance/invariance of the networks, and loss-oracle agreement."""

from __future__ import annotations

import numpy as np
import torch

from . import geometry as geo
from .nets import EncoderConfig, ForceHead, GeometryEncoder, SchNetConfig, interaction_matrix
from .pretrain import ntxent_loss

__all__ = ["run_selfcheck"]


def _tiny_cfg() -> EncoderConfig:
    return EncoderConfig(hidden_dim=8, projection_dim=8,
                         schnet=SchNetConfig(hidden=16, filters=16,
                                             interactions=2, n_rbf=16))


def check_frames(n_samples: int = 1000, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        r_k, r_l = rng.normal(size=3), rng.normal(size=3)
        frame = geo.local_frame(r_k, r_l)
        gram = frame.axes @ frame.axes.T
        if np.abs(gram - np.eye(3)).max() > 1e-6:
            return False
        if abs(np.linalg.det(frame.axes) - 1.0) > 1e-6:
            return False
    worked = geo.local_frame([1.0, 0, 0], [0, 1.0, 0]).axes
    expected = np.array([[0.70711, -0.70711, 0], [0, 0, 1],
                         [-0.70711, -0.70711, 0]])
    return np.abs(worked - expected).max() < 1e-5


def _random_local_coords(rng, n2: int) -> np.ndarray:
    return rng.normal(scale=2.0, size=(n2, 3)) + 1.0


def check_force_equivariance(n_rotations: int = 20, seed: int = 1) -> bool:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    head = ForceHead(_tiny_cfg())
    d = _tiny_cfg().hidden_dim
    coords = _random_local_coords(rng, 5)
    H2 = torch.randn(5, 2 * d)
    h1 = torch.randn(2 * d)
    with torch.no_grad():
        base = head(H2, h1, coords).numpy()
        for _ in range(n_rotations):
            q = geo.sample_rotation(rng)
            rotated = head(H2, h1, coords @ q.T).numpy()
            if np.abs(rotated - base @ q.T).max() > 1e-4:
                return False
    return True


def check_invariance(n_motions: int = 20, seed: int = 2) -> bool:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    cfg = _tiny_cfg()
    enc = GeometryEncoder(cfg)
    feats = rng.normal(size=(8, cfg.feature_dim)).astype(np.float32)
    coords = rng.normal(scale=2.0, size=(8, 3))
    with torch.no_grad():
        base = enc(feats, coords).numpy()
        for _ in range(n_motions):
            q = geo.sample_rotation(rng)
            t = rng.normal(scale=5.0, size=3)
            moved = enc(feats, coords @ q.T + t).numpy()
            if np.abs(moved - base).max() > 1e-4:
                return False
            perm = rng.permutation(8)
            permuted = enc(feats[perm], coords[perm]).numpy()
            if np.abs(permuted - base).max() > 1e-4:
                return False
    return True


def _ntxent_oracle(z2d, z3d, tau):
    n = z2d.shape[0]
    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    total = 0.0
    for i in range(n):
        num = np.exp(cos(z2d[i], z3d[i]) / tau)
        den = sum(np.exp(cos(z2d[i], z3d[k]) / tau) for k in range(n))
        total += np.log(num / den)
        num = np.exp(cos(z3d[i], z2d[i]) / tau)
        den = sum(np.exp(cos(z3d[i], z2d[k]) / tau) for k in range(n))
        total += np.log(num / den)
    return -total / n


def check_loss_oracles(seed: int = 3) -> bool:
    rng = np.random.default_rng(seed)
    for n in range(1, 9):
        a = rng.normal(size=(n, 6))
        b = rng.normal(size=(n, 6))
        ours = float(ntxent_loss(torch.tensor(a), torch.tensor(b), 0.3))
        if abs(ours - _ntxent_oracle(a, b, 0.3)) > 1e-6:
            return False
    e1 = rng.normal(size=(4, 5))
    e2 = rng.normal(size=(3, 5))
    got = interaction_matrix(torch.tensor(e1), torch.tensor(e2)).numpy()
    for i in range(4):
        for j in range(3):
            want = e1[i] @ e2[j] / (np.linalg.norm(e1[i]) * np.linalg.norm(e2[j]))
            if abs(got[i, j] - want) > 1e-7:
                return False
    return True


def run_selfcheck(verbose: bool = True) -> bool:
    checks = [
        ("local frame orthonormality", check_frames),
        ("force-head rotation equivariance", check_force_equivariance),
        ("3D-encoder rigid-motion invariance", check_invariance),
        ("loss and similarity oracles", check_loss_oracles),
    ]
    ok = True
    for name, fn in checks:
        passed = fn()
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
