"""Trainable networks: the 2D pair encoder with cross-molecule interaction,
the invariant 3D environment encoder, and the equivariant force head."""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import geometry as geo
from .chem import FEATURE_DIM, Molecule2D
from .geometry import VirtualGeometry

__all__ = [
    "EncoderConfig",
    "PairEncoderOutput",
    "ConfigurationError",
    "interaction_matrix",
    "PairEncoder",
    "GeometryEncoder",
    "ForceHead",
    "Set2Set",
    "predict_forces",
    "save_checkpoint",
    "load_checkpoint",
]


class ConfigurationError(ValueError):
    pass


@dataclass
class SchNetConfig:
    hidden: int = 128
    filters: int = 128
    interactions: int = 6
    cutoff: float = 5.0
    n_rbf: int = 50


@dataclass
class ForceHeadConfig:
    layers: int = 2
    coeff_dim: int = 3


@dataclass
class EncoderConfig:
    backbone: str = "mpnn3"          # mpnn3 | gin
    hidden_dim: int = 56             # 56 molecular interaction, 300 DDI
    projection_dim: int = 128
    set2set_steps: int = 2
    n_layers: int = 3
    feature_dim: int = FEATURE_DIM
    schnet: SchNetConfig = field(default_factory=SchNetConfig)
    force_head: ForceHeadConfig = field(default_factory=ForceHeadConfig)

    def __post_init__(self):
        if self.hidden_dim <= 0:
            raise ConfigurationError("hidden_dim must be positive")
        if self.schnet.cutoff <= 0:
            raise ConfigurationError("cutoff must be positive")
        if self.force_head.coeff_dim != 3:
            raise ConfigurationError("force head coefficient dimension is 3")
        if self.backbone not in ("mpnn3", "gin"):
            raise ConfigurationError(f"unknown backbone {self.backbone!r}")


@dataclass
class PairEncoderOutput:
    E1: torch.Tensor
    E2: torch.Tensor
    I: torch.Tensor
    H1: torch.Tensor
    H2: torch.Tensor
    z1: torch.Tensor
    z2: torch.Tensor
    z_pair: torch.Tensor


def interaction_matrix(E1: torch.Tensor, E2: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities; all-zero rows get similarity 0."""
    n1 = E1.norm(dim=1, keepdim=True)
    n2 = E2.norm(dim=1, keepdim=True)
    a = E1 / n1.clamp_min(1e-12)
    b = E2 / n2.clamp_min(1e-12)
    a = torch.where(n1 > 1e-12, a, torch.zeros_like(a))
    b = torch.where(n2 > 1e-12, b, torch.zeros_like(b))
    return (a @ b.T).clamp(-1.0, 1.0)


def _graph_tensors(mol: Molecule2D, device=None):
    x = torch.as_tensor(np.asarray(mol.atom_features), dtype=torch.get_default_dtype(),
                        device=device)
    adj = torch.as_tensor(np.asarray(mol.adjacency), dtype=torch.get_default_dtype(),
                          device=device)
    return x, adj


class MPNNLayer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.msg = nn.Linear(dim, dim)
        self.upd = nn.Linear(2 * dim, dim)

    def forward(self, h, adj):
        m = adj @ self.msg(h)
        return F.relu(self.upd(torch.cat([h, m], dim=1)))


class GINLayer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.eps = nn.Parameter(torch.zeros(1))
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))

    def forward(self, h, adj):
        return F.relu(self.mlp((1 + self.eps) * h + adj @ h))


class GraphBackbone(nn.Module):
    """Per-molecule atom encoder: 3-layer MPNN or GIN."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.embed = nn.Linear(cfg.feature_dim, cfg.hidden_dim)
        layer = MPNNLayer if cfg.backbone == "mpnn3" else GINLayer
        self.layers = nn.ModuleList(
            [layer(cfg.hidden_dim) for _ in range(cfg.n_layers)])

    def forward(self, x, adj):
        h = F.relu(self.embed(x))
        for layer in self.layers:
            h = layer(h, adj)
        return h


class Set2Set(nn.Module):
    """Order-invariant readout mapping N x D atom embeddings to 2D."""

    def __init__(self, dim: int, steps: int = 2):
        super().__init__()
        self.dim = dim
        self.steps = steps
        self.lstm = nn.LSTM(2 * dim, dim, num_layers=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q_star = x.new_zeros(1, 1, 2 * self.dim)
        state = None
        for _ in range(self.steps):
            q, state = self.lstm(q_star, state)
            e = x @ q.reshape(self.dim)
            a = torch.softmax(e, dim=0)
            r = (a.unsqueeze(1) * x).sum(dim=0)
            q_star = torch.cat([q.reshape(self.dim), r]).reshape(1, 1, -1)
        return q_star.reshape(2 * self.dim)


class PairEncoder(nn.Module):
    """CIGIN-style 2D pair encoder with cross-molecule interaction."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.encoder1 = GraphBackbone(cfg)
        self.encoder2 = GraphBackbone(cfg)
        self.readout1 = Set2Set(2 * d, cfg.set2set_steps)
        self.readout2 = Set2Set(2 * d, cfg.set2set_steps)

    def forward(self, g1: Molecule2D, g2: Molecule2D) -> PairEncoderOutput:
        x1, a1 = _graph_tensors(g1)
        x2, a2 = _graph_tensors(g2)
        if x1.shape[1] != self.cfg.feature_dim:
            raise ConfigurationError(
                f"feature dim {x1.shape[1]} != configured {self.cfg.feature_dim}")
        E1 = self.encoder1(x1, a1)
        E2 = self.encoder2(x2, a2)
        I = interaction_matrix(E1, E2)
        H1 = torch.cat([E1, I @ E2], dim=1)
        H2 = torch.cat([E2, I.T @ E1], dim=1)
        z1 = self.readout1(H1)
        z2 = self.readout2(H2)
        return PairEncoderOutput(E1=E1, E2=E2, I=I, H1=H1, H2=H2,
                                 z1=z1, z2=z2,
                                 z_pair=torch.cat([z1, z2]))


class ProjectionHead(nn.Module):
    """2-layer head mapping an embedding into the shared contrastive space."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, out_dim), nn.ReLU(), nn.Linear(out_dim, out_dim))

    def forward(self, z):
        return self.net(z)


def shifted_softplus(x):
    return F.softplus(x) - float(np.log(2.0))


class SchNetInteraction(nn.Module):
    def __init__(self, hidden: int, filters: int, n_rbf: int):
        super().__init__()
        self.filter_net = nn.Sequential(
            nn.Linear(n_rbf, filters), nn.Softplus(), nn.Linear(filters, filters))
        self.dense_in = nn.Linear(hidden, filters, bias=False)
        self.dense_out = nn.Sequential(
            nn.Linear(filters, hidden), nn.Softplus(), nn.Linear(hidden, hidden))

    def forward(self, h, edge_src, edge_dst, rbf, cutoff_w):
        w = self.filter_net(rbf) * cutoff_w.unsqueeze(1)
        msg = self.dense_in(h)[edge_dst] * w
        agg = h.new_zeros(h.shape[0], msg.shape[1])
        agg.index_add_(0, edge_src, msg)
        return self.dense_out(agg)


class GeometryEncoder(nn.Module):
    """Continuous-filter distance-based encoder of the virtual environment.

    Depends on coordinates only through interatomic distances, so the
    output is invariant under rigid motions; sum pooling makes it invariant
    to consistent atom permutations.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        sc = cfg.schnet
        self.cfg = cfg
        self.embed = nn.Linear(cfg.feature_dim, sc.hidden)
        self.interactions = nn.ModuleList(
            [SchNetInteraction(sc.hidden, sc.filters, sc.n_rbf)
             for _ in range(sc.interactions)])
        self.project = nn.Sequential(
            nn.Linear(sc.hidden, sc.hidden), nn.Softplus(),
            nn.Linear(sc.hidden, cfg.projection_dim))
        centers = torch.linspace(0.0, sc.cutoff, sc.n_rbf)
        self.register_buffer("centers", centers)
        self.gamma = 1.0 / (centers[1] - centers[0]).item() ** 2

    def _edges(self, coords: np.ndarray):
        d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        src, dst = np.nonzero((d < self.cfg.schnet.cutoff) & (d > 0))
        return src, dst, d[src, dst]

    def forward(self, features, coords) -> torch.Tensor:
        coords = np.asarray(coords, dtype=float)
        x = torch.as_tensor(np.asarray(features), dtype=torch.get_default_dtype())
        src, dst, dist = self._edges(coords)
        src_t = torch.as_tensor(src, dtype=torch.long)
        dst_t = torch.as_tensor(dst, dtype=torch.long)
        dist_t = torch.as_tensor(dist, dtype=torch.get_default_dtype())
        rbf = torch.exp(-self.gamma * (dist_t.unsqueeze(1) - self.centers) ** 2)
        cutoff_w = 0.5 * (torch.cos(dist_t * np.pi / self.cfg.schnet.cutoff) + 1.0)
        h = self.embed(x)
        for block in self.interactions:
            h = h + block(h, src_t, dst_t, rbf, cutoff_w)
        # atom-wise projection before sum pooling keeps isolated fragments
        # strictly additive
        return self.project(h).sum(dim=0)

    def encode(self, vg: VirtualGeometry) -> torch.Tensor:
        if len(vg.coords) < 2:
            raise geo.DegenerateGeometryError(
                "virtual geometry must contain at least 2 atoms")
        return self.forward(vg.atom_features, vg.coords)


class ForceHead(nn.Module):
    """Equivariant force prediction: invariant edge coefficients combined
    with local-frame axes, one complete graph per replica."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.cfg = cfg
        self.edge_2d = nn.Sequential(
            nn.Linear(4 * d, d), nn.ReLU(), nn.Linear(d, d))
        self.edge_3d = nn.Sequential(
            nn.Linear(6, d), nn.ReLU(), nn.Linear(d, d))
        self.node_in = nn.Linear(4 * d, d)
        self.msg = nn.ModuleList(
            [nn.Linear(d, d) for _ in range(cfg.force_head.layers)])
        self.upd = nn.ModuleList(
            [nn.Linear(2 * d, d) for _ in range(cfg.force_head.layers)])
        self.coeff = nn.Sequential(
            nn.Linear(3 * d, d), nn.ReLU(),
            nn.Linear(d, cfg.force_head.coeff_dim))

    def forward(self, H2: torch.Tensor, h1_target: torch.Tensor,
                local_coords: np.ndarray) -> torch.Tensor:
        """Forces for one replica; ``local_coords`` are replica-local."""
        n2 = H2.shape[0]
        if n2 < 2:
            return H2.new_zeros(n2, 3)
        idx_k, idx_l = np.nonzero(~np.eye(n2, dtype=bool))
        axes = np.zeros((len(idx_k), 3, 3))
        projs = np.zeros((len(idx_k), 6))
        for e, (k, l) in enumerate(zip(idx_k, idx_l)):
            frame = geo.local_frame(local_coords[k], local_coords[l])
            axes[e] = frame.axes
            projs[e] = geo.frame_projection(
                frame, local_coords[k], local_coords[l])
        k_t = torch.as_tensor(idx_k, dtype=torch.long)
        l_t = torch.as_tensor(idx_l, dtype=torch.long)
        e2d = self.edge_2d(torch.cat([H2[k_t], H2[l_t]], dim=1))
        e3d = self.edge_3d(torch.as_tensor(projs, dtype=torch.get_default_dtype()))
        e = e2d + e3d
        x = F.relu(self.node_in(
            torch.cat([H2, h1_target.expand(n2, -1)], dim=1)))
        for msg, upd in zip(self.msg, self.upd):
            m = x.new_zeros(x.shape)
            m.index_add_(0, k_t, msg(x)[l_t] * e)
            x = F.relu(upd(torch.cat([x, m], dim=1)))
        coeffs = self.coeff(torch.cat([x[k_t], x[l_t], e], dim=1))
        axes_t = torch.as_tensor(axes, dtype=torch.get_default_dtype())
        contrib = (coeffs.unsqueeze(2) * axes_t).sum(dim=1)
        f = x.new_zeros(n2, 3)
        f.index_add_(0, k_t, contrib)
        return f


def predict_forces(head: ForceHead, H2: torch.Tensor,
                   h1_targets: torch.Tensor, vg: VirtualGeometry) -> torch.Tensor:
    """Forces for every replica: n_replicas x N2 x 3.

    ``H2`` holds the smaller molecule's fused atom embeddings mapped onto
    the replica's atom order; ``h1_targets`` the fused embeddings of the
    assigned target atoms.
    """
    out = []
    for i in range(vg.n_replicas):
        out.append(head(H2, h1_targets[i], vg.replica_local_coords(i)))
    return torch.stack(out)


_MAGIC = b"PMCK"


def save_checkpoint(path, state: dict[str, torch.Tensor], manifest: dict):
    """Single-file archive: JSON manifest + shape-prefixed float32 tensors."""
    buf = io.BytesIO()
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        enc = name.encode()
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", arr.ndim))
        for s in arr.shape:
            buf.write(struct.pack("<I", s))
        buf.write(arr.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        zf.writestr("params.bin", _MAGIC + buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        raw = zf.read("params.bin")
    if raw[:4] != _MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    state: dict[str, np.ndarray] = {}
    off = 4
    while off < len(raw):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(
            raw, dtype="<f4", count=count, offset=off).reshape(shape).copy()
        off += 4 * count
    return manifest, state


def load_state_into(module: nn.Module, state: dict[str, np.ndarray],
                    prefix: str = ""):
    """Copy checkpoint arrays into a module, matching by name."""
    sd = module.state_dict()
    for name, tensor in sd.items():
        key = prefix + name
        if key in state:
            tensor.copy_(torch.as_tensor(state[key], dtype=tensor.dtype))
    module.load_state_dict(sd)
