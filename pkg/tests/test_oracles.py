import math

import numpy as np
import pytest

from qwitness import oracles, states
from qwitness.criteria import evaluate, mr_bound
from qwitness.errors import ConvergenceError
from qwitness.hilbert import SpaceDescriptor, StateVector, p_op, spin_matrices, tensor, x_op
from qwitness.oracles import (
    GridWavefunction,
    gaussian_tmss_moments,
    grid_p_moments,
    min_p_variance_on_support,
    min_spin_ratio_on_window,
    random_state_sweep,
    robertson_slack,
    spin_window_search,
    support_ground_state,
    theorem1_slack,
)


class TestGaussianMoments:
    def test_r_zero(self):
        assert gaussian_tmss_moments(0.0) == pytest.approx((1.0, 1.0))

    def test_r_point_eight(self):
        vx, vp = gaussian_tmss_moments(0.8)
        assert vx == pytest.approx(2.5775, abs=1e-4)
        assert vp == pytest.approx(0.3880, abs=1e-4)

    @pytest.mark.parametrize("r", np.linspace(0, 2, 9))
    def test_product_identity(self, r):
        vx, vp = gaussian_tmss_moments(r)
        assert vx * vp == pytest.approx(1, abs=1e-12)

    def test_agrees_with_fock_numerics(self):
        psi = states.tmss(0.8, cutoff=40)
        r = evaluate(psi, "epr_product_cv")
        vx, vp = gaussian_tmss_moments(0.8)
        assert r.lhs == pytest.approx(vp * vp, rel=0.02)
        assert r.metadata["inferred_variances"][0] == pytest.approx(vp, rel=0.02)


class TestGrid:
    def test_wavefunction_invariants(self):
        x = np.linspace(-1, 1, 8, endpoint=False)
        mask = np.abs(x) < 0.5
        with pytest.raises(ValueError):
            GridWavefunction(x, np.ones(8, complex), mask)

    def test_gaussian_p_variance(self):
        # Gaussian |psi|^2 with Var x = s2 has Var p = 1/s2 in these units
        n, L = 2048, 20.0
        h = 2 * L / n
        x = -L + h * np.arange(n)
        s2 = 0.5
        psi = np.exp(-(x**2) / (4 * s2)).astype(complex)
        psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * h)
        mean, var = grid_p_moments(GridWavefunction(x, psi, np.ones(n, bool)))
        assert mean == pytest.approx(0, abs=1e-12)
        assert var == pytest.approx(1 / s2, rel=1e-10)

    @pytest.mark.parametrize("S", [2.0, 4.0])
    def test_box_value(self, S):
        v = min_p_variance_on_support(S)
        assert v == pytest.approx(4 * math.pi**2 / S**2, rel=0.01)
        assert v >= mr_bound(S)

    def test_scaling(self):
        vals = [min_p_variance_on_support(S) * S**2 for S in (2.0, 4.0, 8.0)]
        assert max(vals) / min(vals) - 1 < 0.01

    def test_support_respected(self):
        wf = support_ground_state(2.0, 2.0, 512)
        assert np.all(wf.amplitudes[~wf.mask] == 0)

    def test_coarse_grid_fails(self):
        with pytest.raises(ConvergenceError):
            min_p_variance_on_support(4.0, L=64.0, N=512, rtol=1e-4)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            support_ground_state(5.0, 2.0, 1024)
        with pytest.raises(ValueError):
            support_ground_state(1.0, 2.0, 256)


class TestSpinWindow:
    def test_s_zero(self):
        assert min_spin_ratio_on_window(2, 0, restarts=5) == pytest.approx(0, abs=1e-12)

    def test_qubit_full_window(self):
        assert min_spin_ratio_on_window(0.5, 1, restarts=10) >= -1e-6

    @pytest.mark.parametrize("S", [1, 2])
    def test_j5(self, S):
        search = spin_window_search(5, S, restarts=20)
        assert search.minimum >= oracles.SPIN_WINDOW_CONTRACT
        c = search.amplitudes
        jx, jy, jz = spin_matrices(5)
        vals, u = np.linalg.eigh(jx)
        weights = np.abs(u.conj().T @ c) ** 2
        support = np.flatnonzero(weights > 1e-12)
        assert support.max() - support.min() <= S

    def test_deterministic(self):
        a = spin_window_search(1.5, 1, restarts=5, seed=3)
        b = spin_window_search(1.5, 1, restarts=5, seed=3)
        np.testing.assert_array_equal(a.finals, b.finals)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            spin_window_search(1, 3)
        with pytest.raises(ValueError):
            spin_window_search(1, 1.5)


class TestSweeps:
    @pytest.mark.parametrize("check", oracles.SWEEP_CHECKS)
    def test_small_sweeps(self, check):
        assert random_state_sweep(40, seed=1, check=check) >= oracles.SWEEP_CONTRACT

    def test_deterministic(self):
        assert random_state_sweep(10, seed=4) == random_state_sweep(10, seed=4)

    def test_product_state_matches_robertson(self):
        rng = np.random.default_rng(0)
        sa = SpaceDescriptor.fock(5)
        va = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        vb = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        a = StateVector.normalized(sa, va)
        psi = tensor(a, StateVector.normalized(sa, vb))
        A, B = psi.space.part("A"), psi.space.part("B")
        slack = theorem1_slack(psi, x_op(A), p_op(A), x_op(B))
        direct = robertson_slack(a.density().matrix, x_op(sa).matrix, p_op(sa).matrix)
        assert slack == pytest.approx(direct, abs=1e-10)

    def test_bad_check(self):
        with pytest.raises(ValueError):
            random_state_sweep(1, check="bell")
        with pytest.raises(ValueError):
            random_state_sweep(0)
