import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special

from fraccond.core import (
    FracParams,
    Grid,
    cns,
    gamma_fn,
    kernel_matrix,
    kernel_weight,
    surface_measure,
    tail_vector,
    tail_weight,
)


class TestGammaFn:
    def test_half_integer_closed_forms(self):
        sq = math.sqrt(math.pi)
        assert gamma_fn(0.5) == pytest.approx(sq, rel=1e-12)
        assert gamma_fn(1.0) == pytest.approx(1.0, rel=1e-12)
        assert gamma_fn(-0.5) == pytest.approx(-2.0 * sq, rel=1e-12)
        assert gamma_fn(1.5) == pytest.approx(sq / 2.0, rel=1e-12)
        assert gamma_fn(-1.5) == pytest.approx(4.0 * sq / 3.0, rel=1e-12)

    def test_against_scipy_over_range(self):
        # independent oracle; poles excluded
        xs = np.linspace(-19.73, 19.73, 401)
        for x in xs:
            if abs(x - round(x)) < 1e-3 and x <= 0:
                continue
            assert gamma_fn(x) == pytest.approx(
                float(scipy.special.gamma(x)), rel=1e-10), x

    @pytest.mark.parametrize("pole", [0.0, -1.0, -7.0])
    def test_pole_raises(self, pole):
        with pytest.raises(ValueError):
            gamma_fn(pole)


class TestCns:
    def test_half_order_1d_closed_form(self):
        # 4^{1/2} Gamma(1) / (pi^{1/2} |Gamma(-1/2)|) = 2/(sqrt(pi) 2 sqrt(pi))
        assert cns(1, 0.5) == pytest.approx(1.0 / math.pi, rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_s_to_one_limit(self, n):
        target = 4.0 * n / surface_measure(n)
        val = cns(n, 0.999) / (0.999 * 0.001)
        assert val == pytest.approx(target, rel=0.01)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_limit_approach_improves(self, n):
        target = 4.0 * n / surface_measure(n)
        errs = [abs(cns(n, s) / (s * (1 - s)) - target) / target
                for s in (0.9, 0.99, 0.999)]
        assert errs[0] > errs[1] > errs[2]

    def test_positive(self):
        for n in (1, 2, 3):
            for s in np.linspace(0.05, 0.95, 10):
                assert cns(n, float(s)) > 0.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            cns(1, 0.0)
        with pytest.raises(ValueError):
            cns(1, 1.0)
        with pytest.raises(ValueError):
            cns(0, 0.5)


class TestFracParams:
    def test_caches_constant(self):
        fp = FracParams(0.37, 1)
        assert fp.cns == pytest.approx(cns(1, 0.37), rel=1e-14)

    def test_clamp(self):
        fp = FracParams(0.995)
        assert fp.clamped().s == 0.99
        assert FracParams(0.5).clamped() is not None

    def test_validation(self):
        with pytest.raises(ValueError):
            FracParams(1.2)


class TestGrid:
    def test_partition_and_spacing(self):
        g = Grid(L=1.0, N=65, a=-0.3, b=0.3)
        assert g.h == pytest.approx(2.0 / 64)
        assert np.all(np.diff(g.nodes) > 0)
        both = np.concatenate([g.interior_idx, g.exterior_idx])
        assert np.array_equal(np.sort(both), np.arange(g.N))
        assert not set(g.interior_idx) & set(g.exterior_idx)
        assert np.all(np.abs(g.nodes[g.interior_idx]) < 0.3)

    def test_omega_strictly_inside(self):
        with pytest.raises(ValueError):
            Grid(L=1.0, N=32, a=-1.0, b=0.3)
        with pytest.raises(ValueError):
            Grid(L=1.0, N=32, a=0.4, b=0.2)

    def test_immutable(self):
        g = Grid(L=1.0, N=32, a=-0.3, b=0.3)
        with pytest.raises((ValueError, RuntimeError)):
            g.nodes[0] = 99.0


class TestKernelWeight:
    def test_adjacent_nodes_hand_value(self):
        # h = 0.1 grid: C h / h^2 = (1/pi) * 10
        g = Grid(L=1.0, N=21, a=-0.3, b=0.3)
        fp = FracParams(0.5)
        w = kernel_weight(g, fp, 10, 11)
        assert w == pytest.approx(10.0 / math.pi, rel=1e-12)

    def test_symmetry(self):
        g = Grid(L=1.0, N=33, a=-0.3, b=0.3)
        fp = FracParams(0.7)
        for i, j in [(0, 5), (3, 20), (31, 2)]:
            assert kernel_weight(g, fp, i, j) == kernel_weight(g, fp, j, i)

    def test_distance_homogeneity(self):
        g = Grid(L=1.0, N=33, a=-0.3, b=0.3)
        fp = FracParams(0.6)
        near = kernel_weight(g, fp, 10, 12)
        far = kernel_weight(g, fp, 10, 14)  # doubled separation
        assert near / far == pytest.approx(2.0 ** (1 + 2 * 0.6), rel=1e-12)

    def test_diagonal_rejected(self):
        g = Grid(L=1.0, N=33, a=-0.3, b=0.3)
        with pytest.raises(ValueError):
            kernel_weight(g, FracParams(0.5), 4, 4)


class TestTailWeight:
    def test_center_value_against_closed_form(self):
        # x=0, L=10, s=0.5: value -> 0.2/pi as h -> 0 (cutoff L + h/2)
        g = Grid(L=10.0, N=20001, a=-3.0, b=3.0)
        fp = FracParams(0.5)
        i = g.N // 2
        assert g.nodes[i] == pytest.approx(0.0, abs=1e-12)
        assert tail_weight(g, fp, i) == pytest.approx(0.2 / math.pi, rel=1e-4)

    def test_matches_quadrature_oracle(self):
        g = Grid(L=2.0, N=41, a=-0.5, b=0.5)
        fp = FracParams(0.7)
        i = 25
        x, R, s = g.nodes[i], g.cutoff, fp.s
        left, _ = scipy.integrate.quad(lambda y: (x - y) ** (-1 - 2 * s),
                                       -np.inf, -R)
        right, _ = scipy.integrate.quad(lambda y: (y - x) ** (-1 - 2 * s),
                                        R, np.inf)
        assert tail_weight(g, fp, i) == pytest.approx(
            fp.cns * (left + right), rel=1e-10)

    def test_window_symmetry(self):
        g = Grid(L=3.0, N=61, a=-0.5, b=0.5)
        fp = FracParams(0.4)
        t = tail_vector(g, fp)
        assert np.allclose(t, t[::-1], rtol=1e-13)

    def test_vanishes_with_large_window(self):
        fp = FracParams(0.5)
        vals = []
        for L in (5.0, 20.0, 80.0):
            g = Grid(L=L, N=101, a=-1.0, b=1.0)
            i = g.N // 2
            vals.append(tail_weight(g, fp, i))
        assert vals[0] > vals[1] > vals[2]
        # decay rate (1/L)^{2s}: factor 16 between L=5 and L=80 at s=0.5
        assert vals[2] == pytest.approx(vals[0] / 16.0, rel=0.02)

    def test_row_sums_finite(self):
        g = Grid(L=1.0, N=128, a=-0.3, b=0.3)
        fp = FracParams(0.5)
        rows = kernel_matrix(g, fp).sum(axis=1) + tail_vector(g, fp)
        assert np.all(np.isfinite(rows))
        assert np.all(rows > 0)
