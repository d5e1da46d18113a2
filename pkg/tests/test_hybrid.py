import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from hybridtomo.core import default_theta_axis, default_x_axis, marginal
from hybridtomo.errors import DomainError, GridMismatch, InterpolationWarning, UsageError, WeightError
from hybridtomo.hybrid import (
    HybridSpec,
    branch_covariance,
    compose_entangled,
    compose_mixture,
    compose_product,
    covariance,
    toy_entanglement_bounds,
    two_branch_covariance,
)
from hybridtomo.states import StateSpec, make_tomogram
from hybridtomo.transforms import classify


@pytest.fixture(scope="module")
def axes():
    return default_x_axis(64), default_theta_axis(32)


def displaced_mixture(axes, a=2.0):
    xa, ta = axes
    plus = make_tomogram(StateSpec.coherent(a, 0), xa, ta)
    minus = make_tomogram(StateSpec.coherent(-a, 0), xa, ta)
    return compose_mixture(HybridSpec.two_branch(0.5, plus, plus, minus, minus))


class TestComposition:
    def test_product_normalized_and_uncorrelated(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(1.0, 0.5), xa, ta)
        b = make_tomogram(StateSpec.thermal(0.3), xa, ta)
        w = compose_product(a, b)
        assert np.max(np.abs(w.per_angle_integral - 1.0)) <= 1e-8
        for i in range(0, 32, 5):
            for j in range(0, 32, 7):
                assert abs(covariance(w, ta.points[i], ta.points[j])) <= 1e-10

    def test_product_marginal_labels(self, x_axis, theta_axis):
        a = make_tomogram(StateSpec.coherent(2, 0), x_axis, theta_axis)
        b = make_tomogram(StateSpec.fock(1), x_axis, theta_axis)
        w = compose_product(a, b)
        c = classify(w, joint=False)
        assert c.subsystems["first"].label == "both"
        assert c.subsystems["second"].label == "quantum-only"

    def test_single_branch_is_product(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(1.0, 0.0), xa, ta)
        b = make_tomogram(StateSpec.fock(2), xa, ta)
        w = compose_mixture(HybridSpec(((1.0, a, b),)))
        assert np.max(np.abs(w.values - compose_product(a, b).values)) <= 1e-15

    def test_grid_mismatch(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(), xa, ta)
        b = make_tomogram(StateSpec.coherent(), default_x_axis(32), ta)
        with pytest.raises(GridMismatch):
            compose_product(a, b)

    @pytest.mark.parametrize("weights", [(0.5, 0.6), (-0.1, 1.1), (0.5, 0.5 + 1e-9)])
    def test_weight_errors(self, weights, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(), xa, ta)
        with pytest.raises(WeightError):
            HybridSpec(((weights[0], a, a), (weights[1], a, a)))

    def test_negative_mu_rejected(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(), xa, ta)
        with pytest.raises(UsageError):
            HybridSpec(((1.0, a, a),), mu_ent=-1.0)

    def test_entangled_mu_zero_is_mixture_bitwise(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(2, 0), xa, ta)
        b = make_tomogram(StateSpec.coherent(-2, 0), xa, ta)
        branches = ((0.3, a, b), (0.7, b, a))
        mix = compose_mixture(HybridSpec(branches))
        ent, rep = compose_entangled(HybridSpec(branches, 0.0, ((1.0, a, a),)))
        assert np.array_equal(ent.values, mix.values)
        assert not rep.negative

    def test_entangled_identical_lists(self, axes):
        xa, ta = axes
        a = make_tomogram(StateSpec.coherent(2, 0), xa, ta)
        b = make_tomogram(StateSpec.coherent(-2, 0), xa, ta)
        branches = ((0.5, a, a), (0.5, b, b))
        ent, _ = compose_entangled(HybridSpec(branches, 3.0, branches))
        assert np.max(np.abs(ent.values - compose_mixture(HybridSpec(branches)).values)) <= 1e-12

    def test_entangled_report_matches_grid_scan(self, axes):
        xa, ta = axes
        plus = make_tomogram(StateSpec.coherent(2, 0), xa, ta)
        minus = make_tomogram(StateSpec.coherent(-2, 0), xa, ta)
        centre = make_tomogram(StateSpec.coherent(0, 0), xa, ta)
        spec = HybridSpec(((0.5, plus, plus), (0.5, minus, minus)), 0.5, ((1.0, centre, centre),))
        w, rep = compose_entangled(spec)
        assert np.max(np.abs(w.per_angle_integral - 1.0)) <= 1e-8
        # oracle: brute-force loop over angle pairs of the raw signed sum
        raw = (1.5 * (0.5 * plus.values[:, None, :, None] * plus.values[None, :, None, :]
                      + 0.5 * minus.values[:, None, :, None] * minus.values[None, :, None, :])
               - 0.5 * centre.values[:, None, :, None] * centre.values[None, :, None, :])
        scan = np.array([[raw[:, :, i, j].min() for j in range(32)] for i in range(32)])
        assert np.max(np.abs(rep.minima - scan)) <= 1e-12
        assert rep.negative == (scan.min() < -1e-9 * w.values.max())
        assert rep.negative and w.quarantined


class TestCovariance:
    def test_displaced_mixture_all_angles(self, axes):
        _, ta = axes
        w = displaced_mixture(axes)
        th = ta.points
        for i in range(32):
            for j in range(32):
                ref = 4.0 * math.cos(th[i]) * math.cos(th[j])
                assert covariance(w, th[i], th[j]) == pytest.approx(ref, abs=1e-3)

    def test_moment_quadrature_oracle(self):
        # independent oracle: adaptive 2-D integration of the analytic mixture density at th1 = th2 = 0
        def dens(x1, x2):
            g = lambda x, m: np.exp(-(x - m) ** 2) / math.sqrt(math.pi)
            return 0.5 * g(x1, 2) * g(x2, 2) + 0.5 * g(x1, -2) * g(x2, -2)
        m12, _ = integrate.dblquad(lambda x2, x1: x1 * x2 * dens(x1, x2), -10, 10, -10, 10)
        assert m12 == pytest.approx(4.0, abs=1e-8)
        w = displaced_mixture((default_x_axis(64), default_theta_axis(32)))
        assert covariance(w, 0.0, 0.0) == pytest.approx(m12, abs=1e-3)
        assert covariance(w, math.pi / 2, 0.0) == pytest.approx(0.0, abs=1e-3)

    def test_off_grid_warns(self, axes):
        w = displaced_mixture(axes)
        with pytest.warns(InterpolationWarning):
            covariance(w, 0.01, 0.0)

    def test_reflection_rule(self, axes):
        w = displaced_mixture(axes)
        # X -> -X under theta -> theta + pi flips the sign of each mean
        assert covariance(w, math.pi, 0.0) == pytest.approx(-covariance(w, 0.0, 0.0), abs=1e-12)

    def test_two_branch_equals_general(self, rng, axes):
        xa, ta = axes
        for _ in range(20):
            specs = [StateSpec.classical_gaussian(*rng.uniform(0.5, 1.2, 2), *rng.uniform(-2, 2, 2))
                     for _ in range(4)]
            a, b, ab, bb = (make_tomogram(s, xa, ta) for s in specs)
            p = float(rng.uniform(0, 1))
            th1, th2 = ta.points[rng.integers(32)], ta.points[rng.integers(32)]
            general = branch_covariance(((p, a, b), (1 - p, ab, bb)), th1, th2)
            two = two_branch_covariance(p, a, b, ab, bb, th1, th2)
            assert general == pytest.approx(two, abs=1e-8)
            w = compose_mixture(HybridSpec.two_branch(p, a, b, ab, bb))
            assert covariance(w, th1, th2) == pytest.approx(general, abs=1e-8)


class TestToy:
    def test_examples(self):
        t = toy_entanglement_bounds(0.2, 0.5, 1.0)
        assert t.z == pytest.approx(-0.1)
        assert not t.in_range and not t.within_bounds
        assert (t.lower, t.upper) == (0.25, 0.75)
        assert t.x < t.lower
        s = toy_entanglement_bounds(0.3, 0.3, 2.5)
        assert s.z == pytest.approx(0.3) and s.in_range

    def test_lattice(self):
        x = np.linspace(0, 1, 101)[:, None, None]
        y = np.linspace(0, 1, 101)[None, :, None]
        mu = np.linspace(0, 4, 21)[None, None, :]
        t = toy_entanglement_bounds(*np.broadcast_arrays(x, y, mu))
        assert t.in_range.size == 101 * 101 * 21
        assert int(np.sum(t.in_range != t.within_bounds)) == 0

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 50))
    def test_property(self, x, y, mu):
        t = toy_entanglement_bounds(x, y, mu)
        assert bool(t.in_range) == bool(t.within_bounds)

    @pytest.mark.parametrize("args", [(1.2, 0.5, 1), (0.2, -0.1, 1), (0.2, 0.5, -1), (float("nan"), 0.5, 1)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            toy_entanglement_bounds(*args)


def test_mixture_marginal_weights(axes):
    xa, ta = axes
    a = make_tomogram(StateSpec.coherent(2, 0), xa, ta)
    ab = make_tomogram(StateSpec.fock(1), xa, ta)
    b = make_tomogram(StateSpec.thermal(0.5), xa, ta)
    w = compose_mixture(HybridSpec.two_branch(0.3, a, b, ab, b))
    assert np.max(np.abs(marginal(w).values - (0.3 * a.values + 0.7 * ab.values))) <= 1e-10
