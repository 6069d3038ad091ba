from __future__ import annotations

import numpy as np
import pytest

from fieldformer.autodiff import ShapeError, Tensor, grad, no_grad
from fieldformer.autodiff import functional as F
from fieldformer.autodiff import tensor as T
from fieldformer.physics import (BoundarySpec, NonFiniteLoss, PDESpec, balance_lambda, effective_speed,
                                 periodic_bc_loss, physics_loss, radiation_bc_loss, residual, sample_collocation,
                                 sample_rim, sponge_loss, sponge_weight, total_loss)
from fieldformer.simulators.grid import GridSpec

TWO_PI = 2 * np.pi


def col(z, k):
    return z[:, k:k + 1]


def constant(c):
    return lambda z: col(z, 0) * 0.0 + c


def test_constant_solves_unforced_heat(rng):
    spec = PDESpec("heat", alpha_x=0.3, alpha_y=0.1)
    r = residual(constant(2.5), rng.uniform(0, 1, (10, 3)), spec)
    np.testing.assert_array_equal(r.data, 0.0)


def test_analytic_heat_mode_residual(rng):
    a = 0.05
    spec = PDESpec("heat", alpha_x=a, alpha_y=0.0)
    u = lambda z: F.exp(col(z, 2) * (-a * TWO_PI ** 2)) * F.sin(col(z, 0) * TWO_PI)
    r = residual(u, rng.uniform(0, 1, (50, 3)), spec)
    assert np.max(np.abs(r.data)) < 1e-10


def test_forcing_enters_residual(rng):
    spec = PDESpec("heat", alpha_x=0.1, alpha_y=0.1, forcing=lambda x, y, t: np.sin(x) + t)
    z = rng.uniform(0, 1, (8, 3))
    r = residual(constant(1.0), z, spec)
    np.testing.assert_allclose(r.data[:, 0], -(np.sin(z[:, 0]) + z[:, 2]))


def test_swe_plane_wave_residual(rng):
    g, H = 9.81, 2.0
    c = np.sqrt(g * H)
    spec = PDESpec("swe", g=g, H=H)

    def wave(z):
        s = F.sin((col(z, 0) - col(z, 2) * c) * TWO_PI)
        return F.concat([s, s * (c / H), s * 0.0], axis=-1)

    r = residual(wave, rng.uniform(0, 1, (20, 3)), spec)
    assert r.shape == (20, 3)
    assert np.max(np.abs(r.data)) < 1e-10


def test_swe_needs_three_outputs(rng):
    with pytest.raises(ShapeError):
        residual(constant(1.0), rng.uniform(0, 1, (4, 3)), PDESpec("swe"))


def test_pde_spec_validation():
    with pytest.raises(ValueError):
        PDESpec("wave")
    with pytest.raises(ValueError):
        PDESpec("heat", alpha_x=np.nan)
    with pytest.raises(ValueError):
        PDESpec("advdiff", kappa=0.1)


def test_advdiff_traveling_solution(rng):
    v = (0.3, -0.2)
    spec = PDESpec("advdiff", kappa=0.0, wind=lambda t: v)
    u = lambda z: F.sin((col(z, 0) - col(z, 2) * v[0]) * 3.0 + (col(z, 1) - col(z, 2) * v[1]) * 2.0)
    r = residual(u, rng.uniform(0, 1, (20, 3)), spec)
    assert np.max(np.abs(r.data)) < 1e-12


def test_physics_loss_examples():
    assert physics_loss(Tensor(np.zeros((5, 1)))).item() == 0.0
    assert physics_loss(Tensor([[0.6]]), delta=1.0).item() == pytest.approx(0.18)
    assert physics_loss(Tensor([[4.0]]), delta=2.0).item() == pytest.approx(1.5 * 4.0)
    assert physics_loss(Tensor([[0.6]]), delta=1.0, scale=2.0).item() == pytest.approx(0.7)
    with pytest.raises(ValueError):
        physics_loss(Tensor(np.zeros((0, 1))))


def test_huber_c1_at_threshold():
    d = 0.7
    for side in (-1.0, 1.0):
        r0 = side * d
        lo, hi = r0 - 1e-9, r0 + 1e-9
        vals = T.huber(Tensor([lo, r0, hi]), d).data
        assert abs(vals[0] - vals[2]) < 1e-8
        x = Tensor(np.array([lo, hi]), requires_grad=True)
        (g,) = grad(T.tsum(T.huber(x, d)), [x])
        assert abs(g[0] - g[1]) < 1e-8


def test_physics_loss_parameter_gradient_through_jets(rng):
    w = Tensor(rng.normal(0, 1, (3, 8)), requires_grad=True)
    v = Tensor(rng.normal(0, 1, (8, 1)), requires_grad=True)
    spec = PDESpec("heat", alpha_x=0.2, alpha_y=0.1)
    z = rng.uniform(0, 1, (16, 3))

    def loss():
        return physics_loss(residual(lambda zz: F.tanh(zz @ w) @ v, z, spec), delta=0.5)

    gw, gv = grad(loss(), [w, v])
    for p, g in ((w, gw), (v, gv)):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + 1e-6
            with no_grad():
                fp = loss().item()
            flat[i] = orig - 1e-6
            with no_grad():
                fm = loss().item()
            flat[i] = orig
            fd = (fp - fm) / 2e-6
            assert abs(g.reshape(-1)[i] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_sample_collocation_in_domain(rng):
    g = GridSpec(10, 10, 50, 0.02, x0=1.0, Lx=2.0)
    pts = sample_collocation(g, 500, rng)
    assert np.all(pts[:, 0] >= 1.0) and np.all(pts[:, 0] <= 3.0)
    assert np.all(pts[:, 2] >= 0) and np.all(pts[:, 2] <= g.T)


# -- boundaries --------------------------------------------------------------------------

def periodic_spec(n=64, Lx=2.0, **kw):
    return BoundarySpec("periodic", GridSpec(16, 16, 20, 0.05, Lx=Lx), samples=n, **kw)


def test_periodic_model_has_zero_loss(rng):
    bc = periodic_spec(match_derivative=True)
    u = lambda z: F.sin(col(z, 0) * (TWO_PI / 2.0)) * F.cos(col(z, 1) * TWO_PI) + col(z, 2)
    assert periodic_bc_loss(u, bc, rng).item() < 1e-12


def test_linear_model_mismatch(rng):
    bc = periodic_spec(Lx=2.0)
    assert periodic_bc_loss(lambda z: col(z, 0) * 1.0, bc, rng).item() == pytest.approx(4.0)


def test_periodic_sampling_consistency():
    bc = periodic_spec()
    u = lambda z: F.sin(col(z, 1) * 5.0) * col(z, 0) + col(z, 2)
    rng = np.random.default_rng(3)
    small = [periodic_bc_loss(u, bc, rng).item() for _ in range(40)]
    big = periodic_bc_loss(u, BoundarySpec("periodic", bc.grid, samples=128), np.random.default_rng(4)).item()
    # standard error of one 128-sample estimate from the spread of 64-sample ones
    se = np.std(small) / np.sqrt(2)
    assert abs(big - np.mean(small)) < 3 * se


def open_spec(**kw):
    return BoundarySpec("open", GridSpec(20, 20, 40, 0.01, periodic=False), **kw)


def test_boundary_spec_validation():
    g = GridSpec(8, 8, 8, 0.1)
    with pytest.raises(ValueError):
        BoundarySpec("open", g, rim=0.5)
    with pytest.raises(ValueError):
        BoundarySpec("open", g, c_max=0.0)
    with pytest.raises(ValueError):
        BoundarySpec("closed", g)


def test_outgoing_wave_radiates(rng):
    bc = open_spec(c_max=2.0)
    c = 0.8
    u = lambda z: F.sin((col(z, 0) - col(z, 2) * c) * 4.0)
    n = 30
    pts = np.stack([np.full(n, bc.grid.x0 + bc.grid.Lx), rng.uniform(0, 1, n), rng.uniform(0, bc.grid.T, n)], 1)
    normals = np.tile([0.0, 1.0], (n, 1))
    loss, speed = radiation_bc_loss(u, bc, points=(pts, normals), return_speed=True)
    assert loss.item() < 1e-20
    # away from nodes of the wave the estimate recovers the speed exactly
    ok = np.abs(np.cos((pts[:, 0] - pts[:, 2] * c) * 4.0)) > 1e-3
    np.testing.assert_allclose(speed[ok], c, rtol=1e-9)


def test_flat_normal_gradient_damps_time_change(rng):
    bc = open_spec(c_max=1.5)
    u = lambda z: col(z, 2) * 0.4 + col(z, 1) * 0.0
    n = 10
    pts = np.stack([np.full(n, bc.grid.x0), rng.uniform(0, 1, n), rng.uniform(0, bc.grid.T, n)], 1)
    normals = np.tile([0.0, -1.0], (n, 1))
    loss, speed = radiation_bc_loss(u, bc, points=(pts, normals), return_speed=True)
    assert np.all(speed == 0.0)
    assert loss.item() == pytest.approx(0.5 * 0.4 ** 2)


def test_effective_speed_clamped_and_finite(rng):
    for _ in range(10):
        ut = rng.standard_normal(1000) * 10.0 ** rng.uniform(-8, 4, 1000)
        un = rng.standard_normal(1000) * 10.0 ** rng.uniform(-12, 4, 1000)
        un[:5] = 0.0
        c = effective_speed(ut, un, 0.7)
        assert np.all(np.isfinite(c)) and np.all(c >= 0) and np.all(c <= 0.7)


def test_sponge_examples(rng):
    bc = open_spec(rim=0.1, samples=400)
    assert sponge_loss(constant(0.0), bc, rng).item() == 0.0
    pts = sample_rim(bc.grid, 400, bc.rim, np.random.default_rng(9))
    one = sponge_loss(constant(1.0), bc, points=pts).item()
    assert one == pytest.approx(np.mean(sponge_weight(pts, bc)))
    assert 0.0 < one < 1.0
    inner = np.stack([rng.uniform(0.3, 0.7, 50), rng.uniform(0.3, 0.7, 50), rng.uniform(0, bc.grid.T, 50)], 1)
    assert sponge_loss(constant(3.0), bc, points=inner).item() == 0.0


def test_sponge_weight_profile():
    bc = open_spec(rim=0.1)
    g = bc.grid
    width = 0.1 * min(g.Lx, g.Ly)
    pts = np.array([[g.x0, 0.5, 0.0], [g.x0 + width / 2, 0.5, 0.0], [g.x0 + width, 0.5, 0.0]])
    w = sponge_weight(pts, bc)
    assert w[0] == pytest.approx(1.0) and 0 < w[1] < 1 and w[2] == pytest.approx(0.0)


# -- balancing and totals ------------------------------------------------------------------

def test_balance_lambda_examples():
    assert balance_lambda(3.0, 3.0, 0.7) == pytest.approx(0.7)
    assert balance_lambda(2.0, 1.0, 0.5) == pytest.approx(1.0)
    assert balance_lambda(2.0, 0.0, 0.5, ceiling=50.0) == 50.0
    assert balance_lambda(2.0, 0.0, 0.5, ceiling=np.inf) == pytest.approx(1e12)
    with pytest.raises(ValueError):
        balance_lambda(-1.0, 1.0, 1.0)


def test_total_loss_examples():
    total, bd = total_loss({"data": 1.0, "phys": 2.0, "bc": 3.0}, 0.5, 0.1)
    assert total == pytest.approx(2.3) and bd.total == total
    assert total_loss({"data": 0.4, "phys": 9.0, "bc": 9.0}, 0.0, 0.0)[0] == 0.4
    assert total_loss({}, 1.0, 1.0)[0] == 0.0
    with pytest.raises(NonFiniteLoss) as err:
        total_loss({"data": 1.0, "phys": np.nan}, 1.0, 1.0)
    assert err.value.part == "phys"
