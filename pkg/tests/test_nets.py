import numpy as np
import pytest
import torch

from pairmol import geometry as geo
from pairmol import nets
from pairmol.nets import (
    EncoderConfig,
    ForceHead,
    GeometryEncoder,
    PairEncoder,
    SchNetConfig,
    interaction_matrix,
    predict_forces,
)
from conftest import dummy_molecule, dummy_pair
from helpers import cosine_matrix_oracle, finite_difference_check


def tiny_cfg(d=8):
    return EncoderConfig(hidden_dim=d, projection_dim=8,
                         schnet=SchNetConfig(hidden=16, filters=16,
                                             interactions=2, n_rbf=16))


class TestInteractionMatrix:
    def test_identity_rows(self):
        e = torch.eye(2)
        assert torch.allclose(interaction_matrix(e, e), torch.eye(2))

    def test_orthogonal_rows_zero(self):
        e1 = torch.tensor([[1.0, 0.0]])
        e2 = torch.tensor([[0.0, 1.0], [0.0, 2.0]])
        assert torch.allclose(interaction_matrix(e1, e2), torch.zeros(1, 2))

    def test_matches_brute_force_loop(self, rng):
        e1 = torch.tensor(rng.normal(size=(3, 4)))
        e2 = torch.tensor(rng.normal(size=(2, 4)))
        got = interaction_matrix(e1, e2).numpy()
        want = cosine_matrix_oracle(e1.numpy(), e2.numpy())
        assert np.abs(got - want).max() < 1e-7

    def test_zero_row_convention(self):
        e1 = torch.zeros(2, 3)
        e2 = torch.ones(2, 3)
        assert torch.allclose(interaction_matrix(e1, e2), torch.zeros(2, 2))


class TestPairEncoder:
    def test_shapes_d56(self):
        torch.manual_seed(0)
        enc = PairEncoder(EncoderConfig(hidden_dim=56))
        out = enc(dummy_molecule(3), dummy_molecule(2))
        assert out.E1.shape == (3, 56)
        assert out.I.shape == (3, 2)
        assert out.H1.shape == (3, 112)
        assert out.z1.shape == (224,)
        assert out.z_pair.shape == (448,)

    def test_h_formula_exact(self):
        torch.manual_seed(1)
        enc = PairEncoder(tiny_cfg())
        out = enc(dummy_molecule(4), dummy_molecule(3))
        assert torch.equal(out.H1, torch.cat([out.E1, out.I @ out.E2], dim=1))
        assert torch.equal(out.H2, torch.cat([out.E2, out.I.T @ out.E1], dim=1))

    def test_permutation_invariance(self):
        torch.manual_seed(2)
        enc = PairEncoder(tiny_cfg())
        g1 = dummy_molecule(4, mol_id="a")
        g2 = dummy_molecule(5, mol_id="b")
        out = enc(g1, g2)
        perm = np.array([3, 1, 4, 0, 2])
        g2p = dummy_molecule(5, mol_id="b")
        g2p.adjacency = g2.adjacency[np.ix_(perm, perm)]
        g2p._features = g2.atom_features[perm]
        outp = enc(g1, g2p)
        assert torch.allclose(outp.z2, out.z2, atol=1e-5)
        assert torch.allclose(outp.H2, out.H2[perm], atol=1e-5)

    def test_deterministic_repeat(self):
        torch.manual_seed(3)
        enc = PairEncoder(tiny_cfg())
        g1, g2 = dummy_molecule(3), dummy_molecule(2)
        a = enc(g1, g2)
        b = enc(g1, g2)
        assert torch.equal(a.z_pair, b.z_pair)

    def test_gin_backbone(self):
        torch.manual_seed(4)
        cfg = tiny_cfg()
        cfg.backbone = "gin"
        out = PairEncoder(cfg)(dummy_molecule(3), dummy_molecule(2))
        assert out.z_pair.shape == (8 * cfg.hidden_dim,)

    def test_config_validation(self):
        with pytest.raises(nets.ConfigurationError):
            EncoderConfig(hidden_dim=0)
        with pytest.raises(nets.ConfigurationError):
            EncoderConfig(backbone="transformer")
        with pytest.raises(nets.ConfigurationError):
            EncoderConfig(schnet=SchNetConfig(cutoff=-1))


class TestGeometryEncoder:
    def _vg(self, seed=0):
        return geo.build_virtual_geometry(dummy_pair(n1=5, n2=3, seed=seed), 2, seed)

    def test_rigid_motion_invariance(self, rng):
        torch.manual_seed(5)
        enc = GeometryEncoder(tiny_cfg())
        vg = self._vg()
        with torch.no_grad():
            base = enc.encode(vg)
            for _ in range(20):
                q = geo.sample_rotation(rng)
                t = rng.normal(scale=4.0, size=3)
                moved = enc(vg.atom_features, vg.coords @ q.T + t)
                assert torch.allclose(moved, base, atol=1e-4)

    def test_permutation_invariance(self, rng):
        torch.manual_seed(6)
        enc = GeometryEncoder(tiny_cfg())
        vg = self._vg(1)
        perm = rng.permutation(len(vg.coords))
        with torch.no_grad():
            base = enc.encode(vg)
            permuted = enc(vg.atom_features[perm], vg.coords[perm])
        assert torch.allclose(permuted, base, atol=1e-4)

    def test_beyond_cutoff_additivity(self):
        # no messages cross the cutoff: two far atoms = sum of singles
        torch.manual_seed(7)
        cfg = tiny_cfg()
        enc = GeometryEncoder(cfg)
        feats = np.random.default_rng(0).normal(
            size=(2, cfg.feature_dim)).astype(np.float32)
        coords = np.array([[0.0, 0, 0], [0.0, 0, 100.0]])
        with torch.no_grad():
            both = enc(feats, coords)
            a = enc(feats[:1], coords[:1])
            b = enc(feats[1:], coords[1:])
        assert torch.allclose(both, a + b, atol=1e-5)

    def test_degenerate_geometry_error(self):
        torch.manual_seed(8)
        enc = GeometryEncoder(tiny_cfg())
        vg = self._vg()
        vg.coords = vg.coords[:1]
        with pytest.raises(geo.DegenerateGeometryError):
            enc.encode(vg)


class TestForceHead:
    def test_single_atom_replica_zero_force(self):
        torch.manual_seed(9)
        cfg = tiny_cfg()
        head = ForceHead(cfg)
        f = head(torch.randn(1, 2 * cfg.hidden_dim),
                 torch.randn(2 * cfg.hidden_dim), np.ones((1, 3)))
        assert torch.equal(f, torch.zeros(1, 3))

    def test_output_shapes(self):
        torch.manual_seed(10)
        cfg = tiny_cfg()
        head = ForceHead(cfg)
        vg = geo.build_virtual_geometry(dummy_pair(n1=6, n2=4, seed=1), 3, 2)
        H2 = torch.randn(4, 2 * cfg.hidden_dim)
        h1 = torch.randn(3, 2 * cfg.hidden_dim)
        f = predict_forces(head, H2, h1, vg)
        assert f.shape == (3, 4, 3)

    def test_equivariance_under_rigid_motion(self, rng):
        torch.manual_seed(11)
        cfg = tiny_cfg()
        head = ForceHead(cfg)
        pair = dummy_pair(n1=5, n2=4, seed=3)
        vg = geo.build_virtual_geometry(pair, 2, 4)
        H2 = torch.randn(4, 2 * cfg.hidden_dim)
        h1 = torch.randn(2, 2 * cfg.hidden_dim)
        with torch.no_grad():
            base = predict_forces(head, H2, h1, vg).numpy()
            for _ in range(25):
                q = geo.sample_rotation(rng)
                t = rng.normal(scale=5.0, size=3)
                moved = geo.VirtualGeometry(
                    coords=vg.coords @ q.T + t,
                    atom_features=vg.atom_features,
                    target_atoms=vg.target_atoms,
                    replica_slices=vg.replica_slices,
                    pseudo_forces=vg.pseudo_forces,
                    epsilons=vg.epsilons, rotations=vg.rotations,
                    seed=vg.seed, n_larger=vg.n_larger)
                f = predict_forces(head, H2, h1, moved).numpy()
                assert np.abs(f - base @ q.T).max() < 1e-4


@pytest.fixture
def double_default():
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(torch.float32)


class TestGradients:
    def test_pair_encoder_gradcheck(self, double_default):
        torch.manual_seed(12)
        enc = PairEncoder(tiny_cfg(d=4))
        g1, g2 = dummy_molecule(3), dummy_molecule(2)

        def loss_fn():
            out = enc(g1, g2)
            return out.z_pair.sum()

        worst = finite_difference_check(loss_fn, list(enc.parameters()))
        assert worst < 1e-3

    def test_force_head_gradcheck(self, double_default):
        torch.manual_seed(13)
        cfg = tiny_cfg(d=4)
        head = ForceHead(cfg)
        coords = np.random.default_rng(1).normal(size=(3, 3)) + 1.0
        H2 = torch.randn(3, 2 * cfg.hidden_dim)
        h1 = torch.randn(2 * cfg.hidden_dim)

        def loss_fn():
            return head(H2, h1, coords).sum()

        worst = finite_difference_check(loss_fn, list(head.parameters()))
        assert worst < 1e-3


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        torch.manual_seed(14)
        enc = PairEncoder(tiny_cfg())
        path = tmp_path / "model.ckpt"
        manifest = {"seed": 14, "epoch": 3, "loss_history": [1.0, 0.5]}
        nets.save_checkpoint(path, enc.state_dict(), manifest)
        loaded_manifest, state = nets.load_checkpoint(path)
        assert loaded_manifest == manifest
        for name, tensor in enc.state_dict().items():
            assert name in state
            assert np.array_equal(state[name],
                                  tensor.numpy().astype(np.float32))

    def test_load_state_into(self, tmp_path):
        torch.manual_seed(15)
        a = PairEncoder(tiny_cfg())
        b = PairEncoder(tiny_cfg())
        path = tmp_path / "a.ckpt"
        nets.save_checkpoint(path, a.state_dict(), {})
        _, state = nets.load_checkpoint(path)
        nets.load_state_into(b, state)
        for (n1, p1), (n2, p2) in zip(a.state_dict().items(),
                                      b.state_dict().items()):
            assert torch.equal(p1, p2)

    def test_rejects_non_checkpoint(self, tmp_path):
        import zipfile
        path = tmp_path / "bad.ckpt"
        with zipfile.ZipFile(path, "w") as zf:
            zf.writestr("manifest.json", "{}")
            zf.writestr("params.bin", b"nope")
        with pytest.raises(ValueError):
            nets.load_checkpoint(path)
