import numpy as np
import pytest
from scipy.sparse.linalg import LinearOperator, eigsh

from weightrecon.data import Dataset, gen_synthetic
from weightrecon.linalg import make_rng
from weightrecon.model import MlpParams, ParamMask, init_mlp, init_rf
from weightrecon.train import DivergenceError, rf_min_norm, train_gd, write_loss_csv


def test_linear_net_converges(rng):
    X = rng.standard_normal((6, 8))
    ds = Dataset(X, X @ rng.standard_normal((8, 2)))
    P, rec = train_gd(MlpParams([np.zeros((2, 8))]), ds, lr=0.02, loss_target=1e-10, max_epochs=100_000)
    assert rec.converged and rec.final_loss <= 1e-10
    assert len(rec.loss_trace) == rec.epochs + 1
    np.testing.assert_allclose(P.forward(X), ds.Y, atol=1e-4)


def test_record_delta_and_mask(rng):
    ds = gen_synthetic(5, 6, 3, 0.1, rng)
    P0 = init_mlp(6, 10, 3, 1, rng)
    Pf, rec = train_gd(P0, ds, lr=1e-2, max_epochs=50)
    np.testing.assert_array_equal(rec.delta, Pf.flatten() - P0.flatten())
    for mask in ParamMask:
        sl = Pf.mask_slice(mask)
        np.testing.assert_array_equal(rec.masked_delta(Pf, mask), rec.thetaf[sl] - rec.theta0[sl])
    assert rec.epochs == 50 and not rec.converged


def test_paper_defaults_converge():
    ds = gen_synthetic(20, 60, 30, 0.5, make_rng(0))
    _, rec = train_gd(init_mlp(60, 200, 2, 1, make_rng(1)), ds)
    assert rec.converged and rec.final_loss <= 1e-7 and rec.lr == 1e-4


def test_loss_monotone_below_curvature_bound(rng):
    ds = gen_synthetic(8, 5, 5, 0.3, rng)
    rf = init_rf(5, 40, rng)
    Phi = rf.features(ds.X)
    # largest curvature of the RF loss via power iteration on Phi^T Phi
    op = LinearOperator((40, 40), matvec=lambda v: Phi.T @ (Phi @ v))
    lam = eigsh(op, k=1, which="LA", return_eigenvectors=False)[0]
    _, rec = train_gd(rf, ds, lr=0.9 / lam, loss_target=0.0, max_epochs=500)
    assert np.all(np.diff(rec.loss_trace) <= 1e-15)


def test_divergence_raises_with_trace(rng):
    ds = gen_synthetic(5, 4, 4, 0.1, rng)
    with pytest.raises(DivergenceError) as info:
        train_gd(init_mlp(4, 30, 3, 1, rng), ds, lr=50.0)
    assert info.value.record.loss_trace.size >= 2
    with pytest.raises(ValueError):
        train_gd(init_mlp(4, 3, 2, 1, rng), ds, lr=0.0)


def test_min_norm_single_sample(rng):
    rf = init_rf(3, 20, rng)
    x = rng.standard_normal((1, 3))
    ds = Dataset(x, np.array([[2.0]]))
    sol = rf_min_norm(rf, ds)
    phi = rf.features(x)[0]
    np.testing.assert_allclose(sol.theta, phi * 2.0 / (phi @ phi), rtol=1e-12)
    assert sol.alpha[0] == pytest.approx(2.0 / (phi @ phi))


def test_min_norm_interpolates_and_is_min_norm(rng):
    ds = gen_synthetic(10, 8, 8, 0.5, rng)
    rf = init_rf(8, 200, rng)
    sol = rf_min_norm(rf, ds)
    Phi = rf.features(ds.X)
    assert sol.residual <= 1e-8
    proj = Phi.T @ np.linalg.solve(Phi @ Phi.T, Phi @ sol.theta)
    assert np.linalg.norm(sol.theta - proj) <= 1e-9
    with pytest.raises(ValueError):
        rf_min_norm(init_rf(8, 5, rng), ds)


def test_min_norm_is_gd_limit():
    rng = make_rng(11)
    ds = gen_synthetic(4, 3, 3, 0.2, rng)
    rf = init_rf(3, 30, rng)
    sol = rf_min_norm(rf, ds)
    Phi = rf.features(ds.X)
    lam = np.linalg.eigvalsh(Phi @ Phi.T)[-1]
    trained, _ = train_gd(rf, ds, lr=1.0 / lam, loss_target=0.0, max_epochs=100_000)
    np.testing.assert_allclose(trained.theta, sol.theta, atol=1e-5)


def test_first_layer_update_stays_in_data_span():
    ds = gen_synthetic(15, 20, 6, 0.5, make_rng(2))
    P0 = init_mlp(20, 100, 3, 1, make_rng(3))
    Pf, _ = train_gd(P0, ds, lr=1e-3, max_epochs=3000)
    s = np.linalg.svd(Pf.layers[0] - P0.layers[0], compute_uv=False)
    assert np.all(s[6:] <= 1e-7 * s[0])


def test_loss_csv(tmp_path, rng):
    ds = gen_synthetic(4, 3, 3, 0.1, rng)
    _, rec = train_gd(init_mlp(3, 5, 2, 1, rng), ds, lr=1e-3, max_epochs=3)
    write_loss_csv(tmp_path / "l.csv", rec)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss" and len(lines) == 5
    assert float(lines[-1].split(",")[1]) == rec.loss_trace[-1]
