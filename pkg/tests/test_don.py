"""Coefficient/basis operator-network tests: branch/trunk contraction
identities, the proper-orthogonal basis fit, and the three variants'
structural contracts."""

from __future__ import annotations

import numpy as np
import pytest

from nob import autodiff as ad
from nob.models.don import (Don, DonConfig, PodBasis, don_cnn_found,
                            don_found, grid_coords, pod_don_found, pod_fit,
                            split_combine)


def _snapshots(n=12, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 2, h, w))


def test_found_configs():
    assert don_found().variant == "vanilla" and don_found().p == 762
    assert don_cnn_found().variant == "cnn_encoder" and don_cnn_found().p == 332
    pod = pod_don_found()
    assert pod.variant == "pod" and pod.p == 500
    assert pod.branch_activation == "gelu"


def test_found_parameter_counts():
    c = don_found()
    branch = ((64 * 64 * 124 + 124)
              + (c.branch_layers - 1) * (124 * 124 + 124)
              + (124 * 762 + 762))
    trunk = ((2 * 148 + 148)
             + (c.trunk_layers - 1) * (148 * 148 + 148)
             + (148 * 762 + 762))
    assert branch + trunk == 860_916
    assert Don(c).parameter_count() == 860_916
    assert Don(don_cnn_found()).parameter_count() == 203_882


def test_odd_p_rounds_up_with_warning():
    with pytest.warns(UserWarning, match="odd"):
        cfg = DonConfig(p=7)
    assert cfg.p == 8


def test_config_validation():
    with pytest.raises(ValueError):
        DonConfig(variant="transformer")
    with pytest.raises(ValueError):
        DonConfig(p=1)
    with pytest.raises(ValueError):
        DonConfig(branch_width=0)
    with pytest.raises(ValueError):
        DonConfig(trunk_activation="nope")
    assert DonConfig.from_dict(DonConfig(p=10).to_dict()).p == 10


def test_split_combine_matches_einsum():
    rng = np.random.default_rng(1)
    coeffs = ad.Tensor(rng.normal(size=(3, 6)))
    basis = ad.Tensor(rng.normal(size=(5, 6)))
    v, w = split_combine(coeffs, basis)
    assert np.allclose(v.data,
                       np.einsum("bp,sp->bs", coeffs.data[:, :3],
                                 basis.data[:, :3]), atol=1e-13)
    assert np.allclose(w.data,
                       np.einsum("bp,sp->bs", coeffs.data[:, 3:],
                                 basis.data[:, 3:]), atol=1e-13)
    with pytest.raises(ValueError, match="even"):
        split_combine(ad.Tensor(rng.normal(size=(3, 5))),
                      ad.Tensor(rng.normal(size=(5, 5))))
    with pytest.raises(ValueError):
        split_combine(coeffs, ad.Tensor(rng.normal(size=(5, 4))))


def test_grid_coords_layout():
    coords = grid_coords(4, 3)
    assert coords.shape == (12, 2)
    xs = np.linspace(0, 1, 4)
    ts = np.linspace(0, 1, 3)
    for ix in range(4):
        for it in range(3):
            assert coords[ix * 3 + it] == pytest.approx((xs[ix], ts[it]))


def test_pod_modes_orthonormal():
    basis = pod_fit(_snapshots(), p=8)
    for m in basis.modes:
        gram = m.T @ m
        assert np.abs(gram - np.eye(m.shape[1])).max() <= 1e-8


def test_pod_full_rank_reconstruction():
    snaps = _snapshots(n=6)
    basis = pod_fit(snaps, p=12)
    for ch in range(2):
        x = snaps[:, ch].reshape(6, -1) - basis.mean[ch].ravel()
        recon = (x @ basis.modes[ch]) @ basis.modes[ch].T
        assert np.abs(recon - x).max() <= 1e-10 * max(1.0, np.abs(x).max())


def test_pod_energy_monotone_and_complete():
    basis = pod_fit(_snapshots(n=10), p=20)
    for ch in range(2):
        r_max = basis.modes[ch].shape[1]
        fracs = [basis.energy_fraction(ch, r) for r in range(r_max + 1)]
        assert all(b >= a - 1e-15 for a, b in zip(fracs, fracs[1:]))
        assert fracs[0] == 0.0
        # centered snapshots: n columns span at most n-1 directions, so the
        # retained n modes capture everything
        assert fracs[-1] == pytest.approx(1.0, abs=1e-10)


def test_pod_sign_canonical():
    basis = pod_fit(_snapshots(), p=8)
    for m in basis.modes:
        peak = m[np.abs(m).argmax(axis=0), np.arange(m.shape[1])]
        assert (peak > 0).all()


def test_pod_truncates_rank_deficit_with_warning():
    with pytest.warns(UserWarning, match="snapshots"):
        basis = pod_fit(_snapshots(n=4), p=16)
    assert basis.n_modes == 8
    assert all(len(s) == 4 for s in basis.singular_values)


def test_pod_uncentered_and_validation():
    basis = pod_fit(_snapshots(), p=6, centered=False)
    assert np.all(basis.mean == 0.0)
    with pytest.raises(ValueError, match="even"):
        pod_fit(_snapshots(), p=7)
    with pytest.raises(ValueError, match="shape"):
        pod_fit(np.zeros((3, 1, 4, 4)), p=4)


def test_pod_basis_array_roundtrip():
    basis = pod_fit(_snapshots(), p=8)
    arrays = basis.to_arrays()
    assert sorted(arrays) == ["pod_mean", "pod_modes_v", "pod_modes_w",
                              "pod_sv_v", "pod_sv_w"]
    back = PodBasis.from_arrays(arrays, field_shape=basis.field_shape)
    assert np.array_equal(back.mean, basis.mean)
    assert all(np.array_equal(a, b)
               for a, b in zip(back.modes, basis.modes))
    assert back.field_shape == (8, 8)


def test_pod_variant_forward_is_mean_plus_modes():
    snaps = _snapshots()
    basis = pod_fit(snaps, p=8)
    cfg = DonConfig(variant="pod", p=8, branch_layers=2, branch_width=10)
    model = Don(cfg, seed=3, basis=basis, field_shape=(8, 8))
    x = np.random.default_rng(5).normal(size=(2, 1, 8, 8))
    out = model(x).data
    coeffs = model.branch(x).data
    for ch, sl in ((0, slice(0, 4)), (1, slice(4, 8))):
        hand = coeffs[:, sl] @ basis.modes[ch].T + basis.mean[ch].ravel()
        assert np.allclose(out[:, ch].reshape(2, -1), hand, atol=1e-12)
    assert model.checkpoint_extras().keys() == basis.to_arrays().keys()


def test_pod_variant_guards():
    basis = pod_fit(_snapshots(), p=8)
    cfg = DonConfig(variant="pod", p=8, branch_layers=1, branch_width=4)
    with pytest.raises(ValueError, match="PodBasis"):
        Don(cfg, basis=None, field_shape=(8, 8))
    with pytest.raises(ValueError, match="grid"):
        Don(cfg, basis=basis, field_shape=(16, 16))
    with pytest.warns(UserWarning, match="overriding"):
        model = Don(DonConfig(variant="pod", p=12, branch_layers=1,
                              branch_width=4), basis=basis,
                    field_shape=(8, 8))
    assert model.p == 8
    with pytest.raises(ValueError, match="grid"):
        model.forward(np.zeros((1, 1, 8, 8)), coords=np.zeros((3, 2)))
    with pytest.raises(ValueError, match="trunk"):
        model.trunk(np.zeros((3, 2)))


def test_cnn_encoder_shape_and_collapse():
    cfg = DonConfig(variant="cnn_encoder", p=6, branch_layers=1,
                    branch_width=8, trunk_layers=1, trunk_width=8,
                    n_conv=2, conv_channel_start=3, conv_channel_step=2)
    model = Don(cfg, field_shape=(16, 16))
    out = model(np.zeros((2, 1, 16, 16)))
    assert out.data.shape == (2, 2, 16, 16)
    deep = DonConfig(variant="cnn_encoder", p=6, branch_layers=1,
                     branch_width=8, n_conv=4, conv_channel_start=2,
                     conv_channel_step=1)
    with pytest.raises(ValueError, match="collapse"):
        Don(deep, field_shape=(8, 8))


def test_vanilla_forward_and_off_grid_eval():
    cfg = DonConfig(p=6, branch_layers=2, branch_width=9, trunk_layers=2,
                    trunk_width=7)
    model = Don(cfg, seed=11, field_shape=(8, 8))
    x = np.random.default_rng(6).normal(size=(3, 1, 8, 8))
    full = model(x).data
    assert full.shape == (3, 2, 8, 8)
    assert np.array_equal(full, Don(cfg, seed=11, field_shape=(8, 8))(x).data)
    coords = grid_coords(8, 8)[[0, 13, 63]]
    sub = model.forward(x, coords=coords).data
    assert sub.shape == (3, 2, 3)
    flat = full.reshape(3, 2, -1)
    assert np.allclose(sub, flat[:, :, [0, 13, 63]], atol=1e-12)
    with pytest.raises(ValueError, match="8x8"):
        model(np.zeros((1, 1, 6, 6)))
    assert model.checkpoint_extras() == {}


def test_gradients_tiny_network():
    cfg = DonConfig(p=4, branch_layers=1, branch_width=5,
                    branch_activation="tanh", trunk_layers=1, trunk_width=5,
                    trunk_activation="tanh")
    model = Don(cfg, seed=7, field_shape=(4, 4))
    x = np.random.default_rng(8).normal(size=(2, 1, 4, 4))
    for t in model.params.values():
        t.requires_grad = True
    worst = ad.grad_check(
        lambda *_: ad.tmean(ad.square(model(x))),
        list(model.params.values()), max_entries=5)
    assert worst <= 1e-4
