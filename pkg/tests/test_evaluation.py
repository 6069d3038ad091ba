from __future__ import annotations

import numpy as np
import pytest

from fieldformer.autodiff import functional as F
from fieldformer.evaluation import (REFERENCE_NOTE, MetricSet, NearestSensor, OracleInterpolator, ReportError,
                                    bootstrap, evaluate, full_field_eval, grid_terms, point_metrics,
                                    read_metrics, relative_from_terms, relative_physics_residual, render_report,
                                    rmse, write_metrics_csv, write_report)
from fieldformer.evaluation.metrics import strided_points
from fieldformer.neighbors import ObservationIndex, VelocityScales
from fieldformer.physics import PDESpec
from fieldformer.simulators import GridSpec, HeatParams, sample_sensors, simulate_heat
from fieldformer.simulators.heat import heat_forcing, heat_max_dt


def col(z, k):
    return z[:, k:k + 1]


@pytest.fixture(scope="module")
def heat_run():
    g = GridSpec(16, 16, 120, 1.0)
    g = g.with_(dt=heat_max_dt(g, HeatParams()))
    fs = simulate_heat(g, HeatParams())
    return fs, sample_sensors(fs, 12, 0.0, seed=1)


def heat_pde(g, p=HeatParams()):
    return PDESpec("heat", alpha_x=p.alpha_x, alpha_y=p.alpha_y, forcing=lambda x, y, t: heat_forcing(x, y, t, g, p))


# -- point metrics and bootstrap -----------------------------------------------------------

def test_point_metrics_examples():
    t = np.arange(6.0)
    assert point_metrics(t, t) == (0.0, 0.0)
    assert point_metrics(t + 0.3, t) == pytest.approx((0.3, 0.3))
    r, m = point_metrics([0.0, 2.0], [0.0, 0.0])
    assert r == pytest.approx(np.sqrt(2)) and m == pytest.approx(1.0)
    with pytest.raises(ValueError):
        point_metrics([], [])


def test_bootstrap_examples(rng):
    assert bootstrap(rmse, np.full(50, 0.2), B=100)[1] < 1e-15   # zero up to summation rounding
    err = rng.standard_normal(300)
    a = bootstrap(rmse, err, B=1000, seed=7)
    assert a == bootstrap(rmse, err, B=1000, seed=7)
    assert abs(a[0] - rmse(err)) < 2 * a[1]
    with pytest.raises(ValueError):
        bootstrap(rmse, err, B=1)


def test_bootstrap_mean_concentrates(rng):
    err = rng.standard_normal(200)
    spread = {}
    for B in (100, 400, 1600):
        spread[B] = np.std([bootstrap(rmse, err, B=B, seed=s)[0] for s in range(20)])
    # 1/sqrt(B): each quadrupling halves the spread; allow sampling slack on 20 repeats
    assert 2.0 < spread[100] / spread[1600] < 8.0


# -- relative residuals -------------------------------------------------------------------------

def test_relative_residual_exact_solution(rng):
    a = 0.05
    u = lambda z: F.exp(col(z, 2) * (-a * (2 * np.pi) ** 2)) * F.sin(col(z, 0) * 2 * np.pi)
    rel = relative_physics_residual(u, rng.uniform(0, 1, (40, 3)), PDESpec("heat", alpha_x=a))
    assert rel.rmse < 1e-10 and rel.mae < 1e-10


def test_relative_residual_anti_aligned(rng):
    a, s = 0.1, 0.7
    u = lambda z: col(z, 2) * s + col(z, 0) * col(z, 0) * (-s / (2 * a))
    rel = relative_physics_residual(u, rng.uniform(0, 1, (20, 3)), PDESpec("heat", alpha_x=a, alpha_y=0.2))
    assert rel.rmse == pytest.approx(1.0) and rel.mae == pytest.approx(1.0)


def test_relative_residual_zero_denominator_undefined(rng):
    rel = relative_physics_residual(lambda z: col(z, 0) * 0.0 + 2.0, rng.uniform(0, 1, (5, 3)),
                                    PDESpec("heat", alpha_x=0.1))
    assert rel.rmse is None and rel.mae is None


def test_relative_residual_scale_invariant(rng):
    z = rng.uniform(0, 1, (30, 3))
    base = lambda zz: F.sin(col(zz, 0) * 3.0 + col(zz, 2)) * F.cos(col(zz, 1) * 2.0)
    forcing = lambda x, y, t: np.cos(x) * t
    a = relative_physics_residual(base, z, PDESpec("heat", alpha_x=0.1, alpha_y=0.3, forcing=forcing))
    lam = 37.0
    b = relative_physics_residual(lambda zz: base(zz) * lam, z,
                                  PDESpec("heat", alpha_x=0.1, alpha_y=0.3, forcing=lambda x, y, t: lam * forcing(x, y, t)))
    assert abs(a.rmse - b.rmse) < 1e-10 and abs(a.mae - b.mae) < 1e-10


def test_relative_residual_swe_stacks_equations():
    terms = {"eta_t": np.array([1.0]), "div_x": np.array([-1.0]), "div_y": np.array([0.0]),
             "u_t": np.array([2.0]), "grad_x": np.array([0.0]), "v_t": np.array([0.0]), "grad_y": np.array([0.0])}
    rel = relative_from_terms(terms, "swe")
    # residuals (0, 2, 0) against magnitudes (2, 2, 0)
    assert rel.rmse == pytest.approx(np.sqrt(4 / 3) / np.sqrt(8 / 3))
    assert rel.mae == pytest.approx((2 / 3) / (4 / 3))


def test_simulator_residual_small_and_shrinking():
    rels = []
    for n in (16, 32):
        g = GridSpec(n, n, 1, 1.0)
        g = g.with_(dt=heat_max_dt(g, HeatParams()), nt=int(0.4 / heat_max_dt(g, HeatParams())))
        fs = simulate_heat(g, HeatParams())
        k, i, j = np.meshgrid(np.arange(1, g.nt - 1, max(1, g.nt // 20)), np.arange(n), np.arange(n), indexing="ij")
        rels.append(relative_from_terms(grid_terms(fs, k.ravel(), i.ravel(), j.ravel(), heat_pde(g)), "heat").rmse)
    assert rels[0] < 0.1
    assert rels[1] < 0.6 * rels[0]


# -- predictors and sweeps ----------------------------------------------------------------------

def test_oracle_exact_on_lattice_and_trilinear_between(heat_run):
    fs, _ = heat_run
    g = fs.grid
    oracle = OracleInterpolator(fs)
    k, i, j = strided_points(g, 7)
    np.testing.assert_array_equal(oracle.predict(g.coords(k, i, j)), fs.values[k, i, j])
    assert full_field_eval(oracle, fs, 10) == (0.0, 0.0)
    mid = g.coords(np.array([5]), np.array([15]), np.array([3])) + np.array([g.dx / 2, g.dy / 2, g.dt / 2])
    corners = [fs.values[5 + dk, (15 + di) % 16, 3 + dj, 0] for dk in (0, 1) for di in (0, 1) for dj in (0, 1)]
    assert oracle.predict(mid)[0, 0] == pytest.approx(np.mean(corners))


class Offset:
    def __init__(self, fs, amp):
        self.oracle, self.amp = OracleInterpolator(fs), amp

    def predict(self, z):
        return self.oracle.predict(z) + self.amp * np.sin(2 * np.pi * z[:, :1]) * np.cos(z[:, 2:3])


def test_full_field_stride_stability(heat_run):
    fs, _ = heat_run
    pred = Offset(fs, 0.05)
    a, _ = full_field_eval(pred, fs, 1)
    b, _ = full_field_eval(pred, fs, 4)
    assert abs(a - b) / a < 0.1
    with pytest.raises(ValueError):
        full_field_eval(pred, fs, 0)


def test_nearest_sensor_memorizes_train_points(heat_run):
    fs, sd = heat_run
    g = fs.grid
    nn = NearestSensor(ObservationIndex.from_dataset(sd, g), VelocityScales.cell_isotropic(g))
    s, k = np.nonzero(sd.train_mask)
    z = g.coords(k, sd.cells[s, 0], sd.cells[s, 1])
    np.testing.assert_array_equal(nn.predict(z), sd.clean[s, k])


def test_evaluate_oracle_heat(heat_run):
    fs, sd = heat_run
    ms = evaluate("oracle", OracleInterpolator(fs), sd, fs, heat_pde(fs.grid), B=50, physics_samples=64)
    assert ms.values["test_rmse"] == 0.0 and ms.values["full_rmse"] == 0.0
    for key in ("phys_rmse_test", "phys_mae_test", "phys_rmse_full", "phys_mae_full"):
        assert 0.0 <= ms.values[key] < 0.2


def test_evaluate_without_pde_has_no_physics_rows(heat_run):
    fs, sd = heat_run
    ms = evaluate("oracle", OracleInterpolator(fs), sd, fs, None, full_field=False, B=20)
    assert set(ms.values) == {"test_rmse", "test_mae"}


# -- report -----------------------------------------------------------------------------------

def sample_sets():
    heat = MetricSet("fieldformer", "heat", {"test_rmse": 0.0123, "test_mae": 0.0081, "full_rmse": 0.013,
                                             "full_mae": 0.009, "phys_rmse_test": 0.4, "phys_mae_test": 0.3,
                                             "phys_rmse_full": None, "phys_mae_full": 0.35},
                     {"test_rmse": 0.0004, "test_mae": 0.0002})
    nn = MetricSet("nearest", "heat", {"test_rmse": 0.02, "test_mae": 0.015, "full_rmse": 0.021, "full_mae": 0.016})
    pol = MetricSet("fieldformer", "pollution", {"test_rmse": 0.05, "test_mae": 0.01, "full_rmse": 0.06,
                                                 "full_mae": 0.02})
    return [heat, nn, pol]


def test_report_structure():
    text = render_report(sample_sets()[:1])
    body = text.split("\n\n")[1].splitlines()
    rows = [ln for ln in body[1:] if not set(ln) <= {"-", " "}]
    assert len(rows) == 8
    assert rows[0].startswith("Heat") and "Test RMSE (bootstrap) (x1e-2)" in rows[0]
    assert "1.23 +- 0.04" in rows[0]
    assert "undefined" in text


def test_report_pollution_omits_physics_rows():
    text = render_report(sample_sets())
    pol = text.split("Pollution", 1)[1].split("\n\n")[0].splitlines()
    rows = [ln for ln in pol if ln.strip() and not set(ln) <= {"-", " "}]
    assert len(rows) == 4 and not any("Physics" in r for r in rows)
    assert "Nearest-sensor" in text.splitlines()[3]


def test_report_reference_values_only_in_footer():
    text = render_report(sample_sets())
    table, footer = text.split(REFERENCE_NOTE)
    assert "1.31 (x1e-2)" in footer and "1.31" not in table


def test_report_byte_stable(tmp_path):
    sets = sample_sets()
    write_metrics_csv(sets, tmp_path / "a.csv")
    r1 = write_report(read_metrics([tmp_path / "a.csv"]), tmp_path / "r1.txt")
    write_metrics_csv(list(reversed(sets)), tmp_path / "b.csv")
    r2 = write_report(read_metrics([tmp_path / "b.csv"]), tmp_path / "r2.txt")
    assert r1 == r2
    assert (tmp_path / "r1.txt").read_bytes() == (tmp_path / "r2.txt").read_bytes()


def test_metrics_csv_round_trip(tmp_path):
    sets = sample_sets()
    write_metrics_csv(sets, tmp_path / "m.csv")
    back = {(s.method, s.benchmark): s for s in read_metrics([tmp_path / "m.csv"])}
    for s in sets:
        assert back[(s.method, s.benchmark)].values == s.values
        assert back[(s.method, s.benchmark)].stds == s.stds


def test_report_conflicts_and_bad_inputs(tmp_path):
    a, b = sample_sets()[0], MetricSet("fieldformer", "heat", {"test_rmse": 0.5})
    write_metrics_csv([a], tmp_path / "a.csv")
    write_metrics_csv([b], tmp_path / "b.csv")
    with pytest.raises(ReportError, match="conflicting"):
        read_metrics([tmp_path / "a.csv", tmp_path / "b.csv"])
    # identical duplicates are fine
    assert len(read_metrics([tmp_path / "a.csv", tmp_path / "a.csv"])) == 1
    (tmp_path / "bad.csv").write_text("method,benchmark,metric,value,std,multiplier\nx,ocean,test_rmse,1,,1\n")
    with pytest.raises(ReportError, match="benchmark"):
        read_metrics([tmp_path / "bad.csv"])
    (tmp_path / "junk.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ReportError):
        read_metrics([tmp_path / "junk.csv"])
    with pytest.raises(ReportError):
        render_report([])
