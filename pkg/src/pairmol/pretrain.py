"""Joint pre-training: contrastive alignment of the 2D pair encoder with
the 3D environment encoder, plus intermolecular force prediction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import geometry as geo
from .data import MoleculePair
from .nets import (
    EncoderConfig,
    ForceHead,
    GeometryEncoder,
    PairEncoder,
    ProjectionHead,
    predict_forces,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PretrainConfig",
    "PretrainModel",
    "ntxent_loss",
    "force_loss",
    "pretrain_step",
    "run_pretraining",
    "StepError",
    "default_pretrain_lr",
]

_PRETRAIN_LR = {"chromophore": 0.0005, "solvation": 0.0001, "ddi": 0.0005}


def default_pretrain_lr(task: str) -> float:
    return _PRETRAIN_LR.get(task, 0.0005)


class StepError(RuntimeError):
    pass


@dataclass
class PretrainConfig:
    n_target_atoms: int = 5
    alpha: float = 0.1
    tau: float = 0.1
    batch_size: int = 32
    epochs: int = 100
    lr: float = 0.0005
    seed: int = 0
    replicas_per_atom: int = 1
    checkpoint_interval: int = 0     # epochs between checkpoints, 0 = end only
    task: str = "chromophore"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.n_target_atoms < 1:
            raise ValueError("n_target_atoms must be >= 1")


def ntxent_loss(z2d: torch.Tensor, z3d: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric NTXent over a batch of aligned embedding pairs."""
    if not (torch.isfinite(z2d).all() and torch.isfinite(z3d).all()):
        raise FloatingPointError("non-finite embeddings in contrastive loss")
    a = z2d / z2d.norm(dim=1, keepdim=True).clamp_min(1e-12)
    b = z3d / z3d.norm(dim=1, keepdim=True).clamp_min(1e-12)
    sim = (a @ b.T) / tau
    term_2d = torch.diagonal(torch.log_softmax(sim, dim=1))
    term_3d = torch.diagonal(torch.log_softmax(sim.T, dim=1))
    return -(term_2d + term_3d).mean()


def force_loss(fhat: torch.Tensor, fstar: torch.Tensor) -> torch.Tensor:
    """Mean squared L2 deviation per replica atom."""
    if fhat.shape != fstar.shape:
        raise ValueError(f"shape mismatch {tuple(fhat.shape)} vs {tuple(fstar.shape)}")
    return ((fhat - fstar) ** 2).sum(dim=-1).mean()


class PretrainModel(nn.Module):
    """All trainable parts of the pre-training objective."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.pair_encoder = PairEncoder(cfg)
        self.proj_2d = ProjectionHead(8 * cfg.hidden_dim, cfg.projection_dim)
        self.geom_encoder = GeometryEncoder(cfg)
        self.force_head = ForceHead(cfg)

    def pair_embeddings(self, pair: MoleculePair):
        g1 = pair.larger_2d if pair.larger_2d is not None else pair.larger.molecule
        g2 = pair.smaller_2d if pair.smaller_2d is not None else pair.smaller.molecule
        out = self.pair_encoder(g1, g2)
        return out, self.proj_2d(out.z_pair)

    def replica_inputs(self, pair: MoleculePair, out, vg: geo.VirtualGeometry):
        """Map heavy-atom fused embeddings onto conformer atom order.

        Explicit hydrogens inherit the embedding of their heavy parent.
        """
        small_map = pair.smaller.molecule.heavy_map
        if small_map is None:
            small_map = np.arange(pair.smaller.molecule.n_atoms)
        large_map = pair.larger.molecule.heavy_map
        if large_map is None:
            large_map = np.arange(pair.larger.molecule.n_atoms)
        H2 = out.H2[torch.as_tensor(small_map, dtype=torch.long)]
        h1 = out.H1[torch.as_tensor(large_map[vg.target_atoms], dtype=torch.long)]
        return H2, h1


def build_geometry(pair: MoleculePair, cfg: PretrainConfig, epoch: int,
                   pair_index: int) -> geo.VirtualGeometry:
    """Epoch geometry: RNG derived from (seed, epoch, pair index)."""
    rng = np.random.default_rng([cfg.seed, epoch, pair_index])
    return geo.build_virtual_geometry(
        pair, cfg.n_target_atoms, rng,
        replicas_per_atom=cfg.replicas_per_atom)


def pretrain_step(model: PretrainModel, batch: list[MoleculePair],
                  cfg: PretrainConfig, epoch: int,
                  pair_indices: list[int] | None = None):
    """One joint-objective step; returns losses and parameter gradients.

    Pairs whose geometry degenerates are skipped with a warning; an empty
    surviving batch raises :class:`StepError`.
    """
    if not batch:
        raise StepError("empty batch")
    if pair_indices is None:
        pair_indices = list(range(len(batch)))
    z2d_list, z3d_list, force_terms = [], [], []
    for pair, idx in zip(batch, pair_indices):
        try:
            vg = build_geometry(pair, cfg, epoch, idx)
        except geo.DegenerateGeometryError as exc:
            logger.warning("skipping pair %d: %s", idx, exc)
            continue
        out, z2d = model.pair_embeddings(pair)
        z2d_list.append(z2d)
        z3d_list.append(model.geom_encoder.encode(vg))
        if cfg.alpha > 0:
            H2, h1 = model.replica_inputs(pair, out, vg)
            fhat = predict_forces(model.force_head, H2, h1, vg)
            fstar = torch.as_tensor(vg.pseudo_forces,
                                    dtype=torch.get_default_dtype())
            force_terms.append(force_loss(fhat, fstar))
    if not z2d_list:
        raise StepError("all pairs in batch were skipped")
    loss_cont = ntxent_loss(torch.stack(z2d_list), torch.stack(z3d_list), cfg.tau)
    if force_terms:
        loss_force = torch.stack(force_terms).mean()
        loss_total = loss_cont + cfg.alpha * loss_force
    else:
        loss_force = torch.zeros(())
        loss_total = loss_cont
    model.zero_grad(set_to_none=True)
    loss_total.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else None)
             for name, p in model.named_parameters()}
    return loss_total.detach(), loss_cont.detach(), loss_force.detach(), grads


def run_pretraining(cfg: PretrainConfig, dataset: list[MoleculePair],
                    out_path, encoder_cfg: EncoderConfig | None = None,
                    log_path=None) -> Path:
    """Full pre-training loop; writes the checkpoint and a CSV loss log."""
    if not dataset:
        raise ValueError("empty pre-training dataset")
    out_path = Path(out_path)
    if log_path is None:
        log_path = out_path.with_suffix(".losses.csv")
    encoder_cfg = encoder_cfg or EncoderConfig()
    torch.manual_seed(cfg.seed)
    model = PretrainModel(encoder_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = []
    rows = ["epoch,step,loss_total,loss_cont,loss_force,lr"]

    def write_ckpt(path, epoch):
        manifest = {
            "config": asdict(cfg),
            "encoder_config": asdict(encoder_cfg),
            "seed": cfg.seed,
            "epoch": epoch,
            "loss_history": [round(v, 6) for v in history],
        }
        try:
            save_checkpoint(path, model.state_dict(), manifest)
        except OSError:
            Path(path).unlink(missing_ok=True)
            raise

    step = 0
    for epoch in range(cfg.epochs):
        for start in range(0, len(dataset), cfg.batch_size):
            batch = dataset[start:start + cfg.batch_size]
            indices = list(range(start, start + len(batch)))
            total, cont, force, _ = pretrain_step(
                model, batch, cfg, epoch, indices)
            optimizer.step()
            history.append(float(total))
            rows.append(
                f"{epoch},{step},{float(total):.6f},{float(cont):.6f},"
                f"{float(force):.6f},{cfg.lr:.6f}")
            step += 1
        if cfg.checkpoint_interval and (epoch + 1) % cfg.checkpoint_interval == 0:
            write_ckpt(out_path.with_suffix(f".epoch{epoch + 1}.ckpt"), epoch + 1)
    write_ckpt(out_path, cfg.epochs)
    Path(log_path).write_text("\n".join(rows) + "\n")
    return out_path
