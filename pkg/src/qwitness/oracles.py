"""Brute-force and closed-form checks, independent of the main evaluation path.

* :func:`gaussian_tmss_moments` conditions the TMSS covariance matrix
  directly (no Fock space).
* :func:`min_p_variance_on_support` minimises Var p over wavefunctions on a
  position grid whose support is confined to a window of width ``S``.
* :func:`min_spin_ratio_on_window` searches, by multi-start local
  optimisation, for states on ``S + 1`` adjacent J_X eigenvalues that come
  closest to ``S * sd(J_Y) = |<J_Z>|``.
* :func:`random_state_sweep` evaluates uncertainty relations on random
  states and reports the worst slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, toeplitz
from scipy.optimize import minimize

from .errors import ConvergenceError
from .hilbert import (
    Observable,
    SpaceDescriptor,
    StateVector,
    local_matrix,
    matrix_moments,
    p_op,
    quadrature_op,
    reduce_to_subsystem,
    spin_matrices,
    x_op,
)
from .inference import conditional_table

GRID_RTOL = 5e-3
SWEEP_CONTRACT = -1e-8
SPIN_WINDOW_CONTRACT = -1e-6


# ---------------------------------------------------------------------------
# Gaussian conditioning
# ---------------------------------------------------------------------------


def tmss_covariance(r: float) -> np.ndarray:
    """Covariance of ``(x_A, p_A, x_B, p_B)`` for the TMSS with ``[x, p] = 2i``."""
    c, s = np.cosh(2 * r), np.sinh(2 * r)
    return np.array(
        [
            [c, 0, s, 0],
            [0, c, 0, -s],
            [s, 0, c, 0],
            [0, -s, 0, c],
        ]
    )


def gaussian_conditional_variance(cov: np.ndarray, target: int, given) -> float:
    """Variance of component ``target`` given components ``given`` (Schur complement)."""
    g = np.atleast_1d(given)
    cross = cov[target, g]
    return float(cov[target, target] - cross @ np.linalg.solve(cov[np.ix_(g, g)], cross))


def gaussian_tmss_moments(r: float):
    """``(Var x_A, Var(p_A | p_B))``, which equal ``(cosh 2r, 1 / cosh 2r)``."""
    if not np.isfinite(r):
        raise ValueError("r must be finite")
    cov = tmss_covariance(r)
    return float(cov[0, 0]), gaussian_conditional_variance(cov, 1, [3])


# ---------------------------------------------------------------------------
# Position-grid support oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridWavefunction:
    x: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def __post_init__(self):
        norm = np.sum(np.abs(self.amplitudes) ** 2) * self.h
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"grid wavefunction norm {norm!r} != 1")
        if np.any(self.amplitudes[~self.mask] != 0):
            raise ValueError("amplitudes outside the support mask must vanish")

    @property
    def extent(self) -> float:
        xs = self.x[self.mask]
        return float(xs[-1] - xs[0])


def _p_symbol(n: int, h: float) -> np.ndarray:
    # p = -2i d/dx has Fourier symbol 2k; the Nyquist mode has no sign and is dropped
    k = 2 * np.pi * np.fft.fftfreq(n, d=h)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return 2 * k


def grid_p_moments(wf: GridWavefunction):
    """``(<p>, Var p)`` by spectral differentiation."""
    sym = _p_symbol(wf.x.size, wf.h)
    p_psi = np.fft.ifft(sym * np.fft.fft(wf.amplitudes))
    mean = float(np.real(np.vdot(wf.amplitudes, p_psi)) * wf.h)
    second = float(np.vdot(p_psi, p_psi).real * wf.h)
    return mean, second - mean**2


def support_ground_state(S: float, L: float, N: int) -> GridWavefunction:
    """Minimiser of ``<p^2>`` among grid wavefunctions vanishing outside ``|x| <= S/2``.

    The support constraint is the projector onto masked grid points; the
    minimisation is the lowest eigenpair of ``P p^2 P`` restricted to the
    masked subspace (a Toeplitz block of the circulant ``p^2``).
    """
    if N < 512:
        raise ValueError("grid needs N >= 512")
    if not 0 < S <= 2 * L:
        raise ValueError(f"need 0 < S <= 2L, got S={S}, L={L}")
    h = 2 * L / N
    x = -L + h * np.arange(N)
    mask = np.abs(x) <= S / 2 + 1e-12 * L
    idx = np.flatnonzero(mask)
    column = np.real(np.fft.ifft(_p_symbol(N, h) ** 2))
    offsets = idx - idx[0]
    block = toeplitz(column[offsets], column[(-offsets) % N])
    _, vecs = eigh(block, subset_by_index=[0, 0])
    psi = np.zeros(N, dtype=complex)
    psi[idx] = vecs[:, 0]
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * h)
    return GridWavefunction(x, psi, mask)


def min_p_variance_on_support(S: float, L: float | None = None, N: int = 1024, rtol: float = GRID_RTOL) -> float:
    """Smallest Var p for a state confined to an x-window of width ``S``.

    Solved on ``N`` and ``2N`` grid points over ``[-L, L)`` (default
    ``L = S``); the finer value is returned. Raises
    :class:`ConvergenceError` if the two differ by more than ``rtol``.
    """
    L = S if L is None else L
    coarse = grid_p_moments(support_ground_state(S, L, N))[1]
    fine = grid_p_moments(support_ground_state(S, L, 2 * N))[1]
    change = abs(fine - coarse) / fine
    if change > rtol:
        raise ConvergenceError(
            f"support oracle not converged for S={S}: N={N} gives {coarse:.6g}, "
            f"N={2 * N} gives {fine:.6g} (change {change:.2%} > {rtol:.1%})"
        )
    return fine


# ---------------------------------------------------------------------------
# Spin window oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSearch:
    minimum: float
    window_start: int
    amplitudes: np.ndarray = field(repr=False)
    finals: np.ndarray = field(repr=False)


def _window_objective(jy, jy2, jz, S, sign):
    def fun(params):
        c = params[: params.size // 2] + 1j * params[params.size // 2 :]
        n = np.vdot(c, c).real
        ay, ay2, az = jy @ c, jy2 @ c, jz @ c
        m1 = np.vdot(c, ay).real / n
        m2 = np.vdot(c, ay2).real / n
        z = np.vdot(c, az).real / n
        var = max(m2 - m1 * m1, 1e-300)
        sd = np.sqrt(var)
        value = S * sd - sign * z
        # Wirtinger derivatives of the normalised quadratic forms
        d_m1 = (ay - m1 * c) / n
        d_m2 = (ay2 - m2 * c) / n
        d_z = (az - z * c) / n
        d = S / (2 * sd) * (d_m2 - 2 * m1 * d_m1) - sign * d_z
        return value, 2 * np.concatenate([d.real, d.imag])

    return fun


def spin_window_search(j: float, S: int, restarts: int = 50, seed: int = 0, agree_tol: float = 1e-4) -> WindowSearch:
    """Multi-start search for ``min (S * sd(J_Y) - |<J_Z>|)`` over window-supported states.

    Every window of ``S + 1`` adjacent J_X eigenvalues and both signs of
    ``<J_Z>`` are searched with ``restarts`` random starts each. At least
    three starts must land within ``agree_tol`` of the best value, otherwise
    :class:`ConvergenceError` is raised.
    """
    jx, jy, jz = spin_matrices(j)
    dim = jx.shape[0]
    if S != int(S) or not 0 <= S <= dim - 1:
        raise ValueError(f"window extent S must be an integer in [0, {dim - 1}], got {S}")
    S = int(S)
    _, u = np.linalg.eigh(jx)
    seeds = np.random.SeedSequence(seed)
    best = None
    finals = []
    for start in range(dim - S):
        uw = u[:, start : start + S + 1]
        blocks = [uw.conj().T @ m @ uw for m in (jy, jy @ jy, jz)]
        for sign in (1.0, -1.0):
            fun = _window_objective(*blocks, S, sign)
            for child in seeds.spawn(restarts):
                x0 = np.random.Generator(np.random.Philox(child)).standard_normal(2 * (S + 1))
                res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
                c = res.x[: S + 1] + 1j * res.x[S + 1 :]
                c /= np.linalg.norm(c)
                # re-evaluate with the true modulus objective
                value = _window_value(c, *blocks, S)
                finals.append(value)
                if best is None or value < best[0]:
                    best = (value, start, uw @ c)
    finals = np.sort(np.array(finals))
    agreeing = int(np.sum(finals <= finals[0] + agree_tol))
    if agreeing < 3:
        raise ConvergenceError(
            f"spin window search j={j}, S={S}: only {agreeing} start(s) within {agree_tol} of the best "
            f"value {finals[0]:.3e}; next values {finals[1:6].tolist()}"
        )
    return WindowSearch(float(best[0]), best[1], best[2], finals)


def _window_value(c, jy, jy2, jz, S):
    m1 = np.vdot(c, jy @ c).real
    m2 = np.vdot(c, jy2 @ c).real
    z = np.vdot(c, jz @ c).real
    return S * np.sqrt(max(m2 - m1 * m1, 0.0)) - abs(z)


def min_spin_ratio_on_window(j: float, S: int, restarts: int = 50, seed: int = 0) -> float:
    """``min (S * sd(J_Y) - |<J_Z>|)`` over states on ``S + 1`` adjacent J_X eigenvalues."""
    return spin_window_search(j, S, restarts, seed).minimum


# ---------------------------------------------------------------------------
# Random-state sweeps
# ---------------------------------------------------------------------------

SWEEP_CHECKS = ("theorem1_cv", "theorem1_spin", "robertson")
_SPIN_JS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def random_pure_state(space: SpaceDescriptor, rng: np.random.Generator) -> StateVector:
    """Complex-Gaussian amplitudes, normalised."""
    v = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    return StateVector.normalized(space, v)


def theorem1_slack(state, a_obs1, a_obs2, b_observable, binning=None) -> float:
    """``Var(O1) Var_inf(O2) - (|<[O1, O2]>|_inf)^2 / 4`` for a bipartite state."""
    space = state.space
    m1 = local_matrix(a_obs1, space, "A")
    m2 = local_matrix(a_obs2, space, "A")
    rho_a = reduce_to_subsystem(state, "A").matrix
    _, var1 = matrix_moments(rho_a, m1)
    table = conditional_table(state, b_observable, binning)
    probs = table.probabilities
    comm = m1 @ m2 - m2 @ m1
    v_inf = 0.0
    c_inf = 0.0
    for p, b in zip(probs, table.bins):
        _, v2 = matrix_moments(b.state.matrix, m2)
        v_inf += p * v2
        c_inf += p * abs(np.einsum("ij,ji->", b.state.matrix, comm))
    return var1 * v_inf - c_inf**2 / 4


def robertson_slack(rho: np.ndarray, m1: np.ndarray, m2: np.ndarray) -> float:
    """``Var(O1) Var(O2) - |<[O1, O2]>|^2 / 4``."""
    _, v1 = matrix_moments(rho, m1)
    _, v2 = matrix_moments(rho, m2)
    c = np.einsum("ij,ji->", rho, m1 @ m2 - m2 @ m1)
    return v1 * v2 - abs(c) ** 2 / 4


def _random_direction(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _sweep_one(check: str, child: np.random.SeedSequence, fock_levels: int) -> float:
    rng = np.random.Generator(np.random.Philox(child))
    if check == "theorem1_cv":
        space = SpaceDescriptor("fock", (fock_levels, fock_levels), n_a=1)
        state = random_pure_state(space, rng)
        a, b = space.part("A"), space.part("B")
        b_obs = quadrature_op(b, 0, rng.uniform(0, 2 * np.pi))
        return theorem1_slack(state, x_op(a), p_op(a), b_obs)
    if check == "theorem1_spin":
        ja, jb = rng.choice(_SPIN_JS, size=2)
        space = SpaceDescriptor.spin(ja, jb, n_a=1)
        state = random_pure_state(space, rng)
        a, b = space.part("A"), space.part("B")
        jxa, jya, _ = spin_matrices(ja)
        n_b = _random_direction(rng)
        mb = sum(w * m for w, m in zip(n_b, spin_matrices(jb)))
        return theorem1_slack(
            state, Observable(a, jxa, "JX"), Observable(a, jya, "JY"), Observable(b, 0.5 * (mb + mb.conj().T), "Jn")
        )
    if check == "robertson":
        if rng.uniform() < 0.5:
            space = SpaceDescriptor("fock", (fock_levels,))
            m1, m2 = x_op(space).matrix, p_op(space).matrix
        else:
            j = rng.choice(_SPIN_JS)
            space = SpaceDescriptor.spin(j)
            jx, jy, jz = spin_matrices(j)
            m1 = sum(w * m for w, m in zip(_random_direction(rng), (jx, jy, jz)))
            m2 = sum(w * m for w, m in zip(_random_direction(rng), (jx, jy, jz)))
        state = random_pure_state(space, rng)
        return robertson_slack(state.density().matrix, m1, m2)
    raise ValueError(f"check must be one of {SWEEP_CHECKS}, got {check!r}")


def random_state_sweep(n: int, seed: int = 0, check: str = "theorem1_cv", fock_levels: int = 6) -> float:
    """Most negative slack of the named relation over ``n`` random pure states.

    ``theorem1_cv`` uses 6x6-level Fock pairs with x, p on A and a random
    quadrature on B; ``theorem1_spin`` uses spin pairs with j <= 3 and a
    random spin component on B; ``robertson`` checks single systems.
    Each draw has its own child seed, so results do not depend on order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if check not in SWEEP_CHECKS:
        raise ValueError(f"check must be one of {SWEEP_CHECKS}, got {check!r}")
    children = np.random.SeedSequence(seed).spawn(n)
    return float(min(_sweep_one(check, c, fock_levels) for c in children))
