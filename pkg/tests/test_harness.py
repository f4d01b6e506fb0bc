import math

import numpy as np
import pytest

from qnvp.core import make_grid
from qnvp.harness import report, scenarios
from qnvp.harness.config import default_config, parse_config
from qnvp.harness.twin import (
    calibrate,
    density_mode,
    measure_frequency,
    perturb,
    run_single,
    run_twin,
    sweep_epsilon,
    time_step,
    with_constants,
)
from qnvp.multifluid import marker_ensemble, seed_markers
from qnvp.vlasov import DIAGNOSTIC_COLUMNS

SMALL = dict(grid__cells=16, params__final_time=0.25, time__samples=5, output__figures=False)


def small(scenario="oscillating", eps=0.25, **kw):
    return default_config(scenario, eps, **{**SMALL, **kw})


@pytest.fixture(scope="module")
def twin():
    cfg = small(perturbation__magnitude=0.01)
    return cfg, run_twin(cfg)


class TestHelpers:
    def test_time_step_divides_interval(self):
        cfg = small(time__dt=0.007)
        dt, per = time_step(cfg, scenarios.kinetic_ensemble(cfg), 0.25)
        assert dt * per == pytest.approx(0.05, rel=1e-14)
        assert dt <= 0.007

    def test_auto_time_step(self):
        cfg = small()
        dt, _ = time_step(cfg, scenarios.kinetic_ensemble(cfg), 0.25)
        assert dt <= 0.25 / 20

    def test_frequency_of_sinusoid(self):
        t = np.linspace(0, 10, 400)
        assert measure_frequency(t, 0.3 * np.cos(2.7 * t + 0.4) + 0.01 * t) == pytest.approx(2.7, rel=1e-8)
        assert math.isnan(measure_frequency(t, np.ones_like(t)))
        with pytest.raises(ValueError):
            measure_frequency([0, 1, 2], [0, 1, 0])

    def test_density_mode(self):
        g = make_grid(2, 16)
        x, _ = g.coordinates
        assert density_mode(1 + 0.3 * np.cos(2 * np.pi * x), g) == pytest.approx(0.3, rel=1e-14)

    def test_perturb_hits_target(self):
        cfg = small()
        g0 = marker_ensemble(seed_markers(scenarios.fluid_family(cfg), 1))
        out, amp, w2 = perturb(g0, cfg, 3, 0.02)
        assert amp > 0 and w2 == pytest.approx(0.02, rel=1e-6)
        assert perturb(g0, cfg, 3, 0.0) == (g0, 0.0, 0.0)
        same, *_ = perturb(g0, cfg.with_values(perturbation__kind="none"), 3, 0.02)
        assert same is g0


class TestTwin:
    def test_checks(self, twin):
        _, rep = twin
        assert rep.passed, rep.checks
        assert rep.envelope_applicable

    def test_initial_values(self, twin):
        _, rep = twin
        assert rep.w2_f_geps[0] == pytest.approx(0.01, rel=1e-6)
        assert rep.env_w2[0] == pytest.approx(rep.w2_f_geps[0], rel=1e-12)
        assert rep.env_support[0] == pytest.approx(rep.support[0], rel=1e-12)
        assert rep.a_integral[0] == 0.0

    def test_triangle(self, twin):
        _, rep = twin
        assert np.all(rep.w1_ftilde_g <= rep.w1_filtered + rep.w1_geps_g + 1e-9)

    def test_order_of_distances(self, twin):
        _, rep = twin
        assert np.all(rep.w1_unfiltered <= rep.w2_f_geps * (1 + 1e-10))

    def test_zero_perturbation(self):
        cfg = small(perturbation__magnitude=0.0)
        rep = run_twin(cfg)
        assert rep.phi_measured == 0.0 and rep.w2_f_geps[0] == 0.0
        assert not rep.envelope_applicable
        assert rep.checks["envelope_w2"]
        assert "n/a (zero initial distance" in report.twin_summary(rep, cfg)

    def test_calibration(self, twin):
        cfg, rep = twin
        consts = calibrate(rep, safety=1.0)
        assert consts["c0"] >= 1.0 and consts["c_alpha"] > 0
        again = run_twin(with_constants(cfg, consts))
        assert np.all(again.env_w2_ok) and np.all(again.env_support_ok)

    def test_well_prepared_filter_is_identity(self):
        rep = run_twin(small("shear", perturbation__magnitude=0.01))
        assert rep.corrector_divergence < 1e-10
        np.testing.assert_allclose(rep.w1_filtered, rep.w1_unfiltered, rtol=0, atol=1e-10)


class TestReports:
    def test_twin_csv(self, twin, tmp_path):
        cfg, rep = twin
        paths = report.write_twin_report(rep, cfg, tmp_path)
        lines = paths["twin"].read_text().splitlines()
        assert tuple(lines[0].split(",")) == report.TWIN_COLUMNS
        assert len(lines) == 1 + len(rep.times)
        assert "overall: PASS" in paths["summary"].read_text()
        assert not (tmp_path / "distances.png").exists()

    def test_figures(self, twin, tmp_path):
        cfg, rep = twin
        paths = report.write_twin_report(rep, cfg, tmp_path, figures=True)
        for key in ("fig_distances", "fig_envelopes", "fig_modes"):
            assert paths[key].stat().st_size > 0

    def test_deterministic_and_round_trip(self, twin, tmp_path):
        cfg, rep = twin
        report.write_twin_report(rep, cfg, tmp_path / "a")
        report.write_twin_report(run_twin(cfg), cfg, tmp_path / "b")
        # rerun from the resolved configuration the report wrote
        back = parse_config(tmp_path / "a" / "config.cfg")
        assert back.digest() == cfg.digest()
        report.write_twin_report(run_twin(back), back, tmp_path / "c")
        h = report.report_hash(tmp_path / "a")
        assert h == report.report_hash(tmp_path / "b") == report.report_hash(tmp_path / "c")

    def test_seed_changes_results(self, twin, tmp_path):
        cfg, rep = twin
        other = run_twin(cfg, seed=cfg.seed + 1)
        assert not np.array_equal(other.w2_f_geps, rep.w2_f_geps)


class TestSweep:
    def test_singleton(self):
        rows, reps = sweep_epsilon(small(), [0.5])
        assert len(rows) == 1 and rows[0].epsilon == 0.5
        assert rows[0].phi == 0.25  # square schedule
        assert rows[0].passed == reps[0].passed

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            sweep_epsilon(small(), [])
        with pytest.raises(ValueError):
            sweep_epsilon(small(), [1.5])

    def test_threads_do_not_change_results(self, tmp_path):
        cfg = small(params__final_time=0.1, time__samples=2)
        r1, p1 = sweep_epsilon(cfg, [0.5, 0.25], threads=1)
        r2, p2 = sweep_epsilon(cfg, [0.5, 0.25], threads=2)
        assert r1 == r2
        report.write_sweep_report(r1, p1, cfg, tmp_path / "one")
        report.write_sweep_report(r2, p2, cfg, tmp_path / "two")
        assert report.report_hash(tmp_path / "one") == report.report_hash(tmp_path / "two")


class TestSingle:
    def test_fluid_scenario_fills_reference(self, tmp_path):
        cfg = small("cold", 0.5, scenario__amplitude=0.01, params__final_time=0.5, time__samples=10)
        rep = run_single(cfg)
        assert rep.checks["mass"]
        ref = np.asarray(rep.diagnostics.w2_to_reference)
        assert ref[0] == 0.0 and np.all(np.isfinite(ref))
        paths = report.write_run_report(rep, cfg, tmp_path)
        header = paths["diagnostics"].read_text().splitlines()[0]
        assert tuple(header.split(",")) == DIAGNOSTIC_COLUMNS

    def test_kinetic_scenario(self):
        cfg = small("maxwellian", 0.5, particles__count=2000, params__final_time=0.1, time__samples=2)
        rep = run_single(cfg, keep_snapshots=True)
        assert rep.passed, rep.checks
        assert np.all(np.isnan(rep.diagnostics.w2_to_reference))
        assert len(rep.snapshots) == len(rep.diagnostics)
        assert rep.provenance["config_sha256"] == cfg.digest()


class TestEnvelopeFromDiagnostics:
    def test_rows(self, tmp_path):
        cfg = small("cold", 0.5, scenario__amplitude=0.01, params__final_time=0.5, time__samples=10)
        rep = run_single(cfg)
        diag = report.read_diagnostics(rep.diagnostics.to_csv(tmp_path / "d.csv"))
        rows = report.envelope_rows(diag, cfg)
        assert len(rows) == len(rep.diagnostics)
        # zero initial distance: the stability envelope is zero, the
        # support envelope still applies
        assert rows[0]["env_w2"] == 0.0
        assert all(r["ok"] for r in rows)
        assert "n/a (zero initial distance" in report.envelope_summary(rows)
        out = report.write_envelope_report(rows, cfg, tmp_path)
        assert tuple(out["envelope"].read_text().splitlines()[0].split(",")) == report.ENVELOPE_COLUMNS
        assert report.envelope_summary(rows).splitlines()[0].startswith(f"samples: {len(rows)}")

    def test_missing_column(self):
        with pytest.raises(ValueError, match="vmax"):
            report.envelope_rows({"t": np.zeros(2), "rho_inf": np.ones(2), "w2_ref": np.zeros(2)}, small())

    def test_violation_detected(self):
        diag = {"t": np.array([0.0, 1e-3]), "vmax": np.ones(2), "rho_inf": np.ones(2), "w2_ref": np.array([0.01, 1.0])}
        rows = report.envelope_rows(diag, small())
        assert rows[0]["ok"] and not rows[1]["ok"]
        assert report.envelope_summary(rows).endswith("FAIL")
