"""Shared test utilities: finite-difference gradient checks and loss oracles."""

import numpy as np
import torch


def finite_difference_check(loss_fn, params, rel_tol=1e-3, step=1e-4,
                            max_entries=4, rng=None):
    """Compare analytic gradients with central finite differences.

    ``loss_fn`` takes no arguments and returns a scalar tensor built from
    ``params`` (list of float64 tensors with requires_grad). A handful of
    entries per tensor is probed. Returns the worst relative error seen.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        if p.grad is None:
            continue
        flat = p.detach().reshape(-1)
        grad = p.grad.detach().reshape(-1)
        n = flat.numel()
        idxs = rng.choice(n, size=min(max_entries, n), replace=False)
        for i in idxs:
            orig = flat[i].item()
            h = step * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
            fd = (up - down) / (2 * h)
            g = grad[i].item()
            denom = max(abs(fd), abs(g), 1e-6)
            worst = max(worst, abs(fd - g) / denom)
    return worst


def ntxent_oracle(z2d, z3d, tau):
    """Explicit double-loop NTXent with cosine similarity."""
    z2d = np.asarray(z2d, dtype=float)
    z3d = np.asarray(z3d, dtype=float)
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


def cosine_matrix_oracle(e1, e2):
    e1, e2 = np.asarray(e1, dtype=float), np.asarray(e2, dtype=float)
    out = np.zeros((len(e1), len(e2)))
    for i in range(len(e1)):
        for j in range(len(e2)):
            na, nb = np.linalg.norm(e1[i]), np.linalg.norm(e2[j])
            out[i, j] = 0.0 if na == 0 or nb == 0 else e1[i] @ e2[j] / (na * nb)
    return out


def auroc_oracle(preds, labels):
    """All positive/negative comparisons with half credit for ties."""
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    pos = preds[labels == 1]
    neg = preds[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))
