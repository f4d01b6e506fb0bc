import math

import numpy as np
import pytest

from qnvp.core import (
    DensitySpec,
    GridError,
    GriddedField,
    ParticleEnsemble,
    QuasineutralParams,
    SpectralField,
    b_delta_norm,
    deterministic_rng,
    evaluate_at,
    forward_transform,
    interpolate,
    inverse_transform,
    make_grid,
    periodic_distance,
    sample_ensemble,
    wrap,
)


class TestParams:
    def test_velocity_cutoff(self):
        p = QuasineutralParams(epsilon=0.25, gamma=1.0, c0=2.0)
        assert p.velocity_cutoff == pytest.approx(8.0, rel=1e-15)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epsilon": 0.0},
            {"epsilon": 1.5},
            {"epsilon": 0.5, "alpha": 1.0},
            {"epsilon": 0.5, "beta": 2.0},
            {"epsilon": 0.5, "c0": 1.0},
            {"epsilon": 0.5, "c_alpha": 0.0},
            {"epsilon": 0.5, "final_time": 0.0},
            {"epsilon": 0.5, "gamma": -1.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            QuasineutralParams(**kwargs)


class TestGrid:
    def test_geometry(self):
        g = make_grid(2, 8)
        assert g.shape == (8, 8)
        assert g.spacing == (0.125, 0.125)
        assert g.n_cells == 64
        assert g.cell_volume == 1 / 64
        assert g.nodes.shape == (64, 2)
        np.testing.assert_array_equal(g.nodes[9], [0.125, 0.125])

    def test_mixed_cells(self):
        g = make_grid(2, (8, 16))
        assert g.shape == (8, 16)
        assert g.wavenumbers[1].shape == (8, 16)

    @pytest.mark.parametrize("cells", [6, 2, 0])
    def test_rejects_bad_counts(self, cells):
        with pytest.raises(GridError):
            make_grid(2, cells)

    def test_rejects_dimension(self):
        with pytest.raises(GridError):
            make_grid(4, 8)

    def test_k_squared(self):
        g = make_grid(1, 8)
        assert g.k_squared[1] == pytest.approx(4 * math.pi**2)
        assert g.k_squared[7] == pytest.approx(4 * math.pi**2)  # k = -1


class TestGeometry:
    def test_wrap_guard(self):
        y = wrap(np.array([-1e-20, 1.0, 2.25, -0.25]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 0.25, 0.75])
        assert np.all(y < 1.0)

    def test_periodic_distance(self):
        assert periodic_distance([0.1], [0.9]) == pytest.approx(0.2)
        assert periodic_distance([0.05, 0.95], [0.95, 0.05]) == pytest.approx(math.sqrt(0.02))
        assert periodic_distance([0.5, 0.5], [0.0, 0.0]) == pytest.approx(math.sqrt(0.5))

    def test_distance_arrays(self, rng):
        x, y = rng.random((5, 2)), rng.random((5, 2))
        d = periodic_distance(x, y)
        assert d.shape == (5,)
        assert np.all(d <= math.sqrt(0.5) + 1e-15)


class TestEnsemble:
    def test_wraps_and_freezes(self):
        ens = ParticleEnsemble([[1.25, -0.5]], [[1.0, 2.0]], [1.0])
        np.testing.assert_array_equal(ens.positions, [[0.25, 0.5]])
        with pytest.raises(ValueError):
            ens.positions[0, 0] = 0.0

    def test_moments(self):
        ens = ParticleEnsemble([[0.1, 0.2], [0.3, 0.4]], [[1.0, 0.0], [0.0, 2.0]], [0.25, 0.75])
        np.testing.assert_allclose(ens.momentum(), [0.25, 1.5])
        assert ens.second_moment() == pytest.approx(0.25 + 3.0)
        assert ens.mass == 1.0
        assert not ens.equal_weights

    def test_replace_keeps_seed(self):
        ens = ParticleEnsemble([[0.1]], [[0.0]], [1.0], seed=7)
        assert ens.replace(velocities=[[1.0]]).seed == 7

    @pytest.mark.parametrize(
        "x, v, w",
        [
            ([[0.1, 0.2]], [[0.0, 0.0]], [-1.0]),
            ([[0.1, 0.2]], [[np.nan, 0.0]], [1.0]),
            ([[0.1, 0.2]], [[0.0]], [1.0]),
            ([[0.1, 0.2]], [[0.0, 0.0]], [1.0, 1.0]),
        ],
    )
    def test_rejects(self, x, v, w):
        with pytest.raises(ValueError):
            ParticleEnsemble(x, v, w)


class TestTransforms:
    def test_cosine_coefficients(self):
        g = make_grid(2, 16)
        x, y = g.coordinates
        f = GriddedField(g, np.cos(2 * np.pi * (2 * x + 3 * y)))
        fh = forward_transform(f)
        assert fh.coefficient((2, 3)) == pytest.approx(0.5)
        assert fh.coefficient((-2, -3)) == pytest.approx(0.5)
        assert abs(fh.coefficient((0, 0))) < 1e-15

    def test_round_trip(self, rng):
        g = make_grid(3, 8)
        vals = rng.standard_normal((2,) + g.shape)
        back = inverse_transform(forward_transform(GriddedField(g, vals)))
        np.testing.assert_allclose(back.values, vals, atol=1e-13)

    def test_b_delta_norm(self):
        g = make_grid(1, 16)
        (x,) = g.coordinates
        fh = forward_transform(GriddedField(g, np.cos(2 * np.pi * 3 * x)))
        assert b_delta_norm(fh, 2.0) == pytest.approx(8.0)
        assert b_delta_norm(fh, 0.5) == pytest.approx(0.125)
        with pytest.raises(ValueError):
            b_delta_norm(fh, 0.0)

    def test_evaluate_off_grid(self, rng):
        g = make_grid(2, 16)
        x, y = g.coordinates

        def f(a, b):
            return 1 + np.sin(2 * np.pi * a) * np.cos(4 * np.pi * b) + 0.3 * np.cos(2 * np.pi * (a - 3 * b))

        coeffs = forward_transform(GriddedField(g, f(x, y))).coefficients
        pts = rng.random((50, 2))
        np.testing.assert_allclose(evaluate_at(coeffs, g, pts)[0].real, f(pts[:, 0], pts[:, 1]), atol=1e-12)

    def test_spectral_field_shape(self):
        g = make_grid(1, 8)
        with pytest.raises(GridError):
            SpectralField(g, np.zeros(4))


class TestInterpolate:
    def test_nodes_and_midpoints(self):
        g = make_grid(2, 4)
        vals = np.arange(16, dtype=float).reshape(4, 4)
        out = interpolate(vals, g, np.array([[0.25, 0.5], [0.125, 0.0], [0.875, 0.0]]))
        assert out[0, 0] == vals[1, 2]
        assert out[1, 0] == pytest.approx(0.5 * (vals[0, 0] + vals[1, 0]))
        # periodic wrap between the last and first node
        assert out[2, 0] == pytest.approx(0.5 * (vals[3, 0] + vals[0, 0]))


class TestSampling:
    def test_deterministic(self):
        spec = DensitySpec(2, "maxwellian", 0.5, 2.0, None, 0.2)
        a = sample_ensemble(spec, 500, 11)
        b = sample_ensemble(spec, 500, 11)
        c = sample_ensemble(spec, 500, 12)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.velocities, b.velocities)
        assert not np.array_equal(a.positions, c.positions)

    def test_rng_streams(self):
        assert deterministic_rng(3, 0).random() == deterministic_rng(3, 0).random()
        assert deterministic_rng(3, 0).random() != deterministic_rng(3, 1).random()

    def test_support_and_mass(self):
        spec = DensitySpec(2, "ball", cutoff=1.5, drift=(0.5, 0.0))
        ens = sample_ensemble(spec, 2000, 0)
        assert ens.mass == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.linalg.norm(ens.velocities - [0.5, 0.0], axis=1)) <= 1.5
        assert spec.support_radius == 2.0

    def test_spatial_mode(self):
        # E[cos(2 pi x1)] = a / 2 under 1 + a cos(2 pi x1)
        spec = DensitySpec(2, "dirac", amplitude=0.4)
        ens = sample_ensemble(spec, 200_000, 5)
        m = float(np.mean(np.cos(2 * np.pi * ens.positions[:, 0])))
        assert m == pytest.approx(0.2, abs=0.01)

    def test_truncated_maxwellian_moment(self):
        spec = DensitySpec(2, "maxwellian", 1.0, 1.5)
        ens = sample_ensemble(spec, 200_000, 2)
        mc = float(np.mean(np.sum(ens.velocities**2, axis=1)))
        # closed form: 2 * (1 - (1 + c^2/2) e^{-c^2/2}) / (1 - e^{-c^2/2}) for sigma = 1
        q = math.exp(-1.5**2 / 2)
        exact = 2 * (1 - (1 + 1.5**2 / 2) * q) / (1 - q)
        assert spec.second_moment() == pytest.approx(exact, rel=1e-12)
        assert mc == pytest.approx(exact, rel=0.01)

    def test_admissible_support(self):
        spec = DensitySpec(2, "ball", cutoff=10.0)
        with pytest.raises(ValueError, match="exceeds"):
            sample_ensemble(spec, 10, 0, QuasineutralParams(epsilon=0.5))

    def test_unbounded_rejected(self):
        with pytest.raises(ValueError):
            DensitySpec(2, "maxwellian", 1.0, None)
