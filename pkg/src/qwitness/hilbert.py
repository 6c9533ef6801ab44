"""Truncated Hilbert spaces, the operators that act on them, and conditioning.

Conventions
-----------
Quadratures are ``x = a + a^dag`` and ``p = i (a^dag - a)`` so that
``[x, p] = 2i`` and the vacuum has unit variance in every quadrature.
Spin matrices use the ``|j, m>`` basis ordered ``m = j, j-1, ..., -j``.

Bipartite spaces put the ``n_a`` leading modes in subsystem A and the rest
in subsystem B. All matrices are dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence, Union

import numpy as np

from .errors import EmptyBranchError, SpaceMismatchError

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-10
NORM_TOL = 1e-12

_KINDS = ("fock", "spin")


def _frozen(array, dtype=complex):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpaceDescriptor:
    """Tensor product of truncated modes (Fock) or spin ladders.

    Args:
        kind: ``"fock"`` or ``"spin"``.
        mode_dims: per-mode dimension, ``n_max + 1`` for a Fock mode and
            ``2j + 1`` for a spin.
        n_a: number of leading modes forming subsystem A. ``None`` marks a
            space with no bipartition.
        role: ``"A"`` or ``"B"`` on descriptors returned by :meth:`part`.
            It does not take part in equality; it only lets
            :func:`local_matrix` reject an operator built for the other side.
    """

    kind: str
    mode_dims: tuple
    n_a: int | None = None
    role: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims:
            raise ValueError("a space needs at least one mode")
        if any(d < 2 for d in dims):
            raise ValueError(f"every mode dimension must be >= 2, got {dims}")
        object.__setattr__(self, "mode_dims", dims)
        if self.n_a is not None and not 1 <= self.n_a < len(dims):
            raise ValueError(
                f"n_a={self.n_a} does not split {len(dims)} modes into two nonempty parts"
            )

    @classmethod
    def fock(cls, *cutoffs: int, n_a: int | None = None) -> "SpaceDescriptor":
        """Fock space with the given photon-number cutoffs (``n_max`` per mode)."""
        return cls("fock", tuple(c + 1 for c in cutoffs), n_a)

    @classmethod
    def spin(cls, *js: float, n_a: int | None = None) -> "SpaceDescriptor":
        return cls("spin", tuple(_spin_dim(j) for j in js), n_a)

    @property
    def dim(self) -> int:
        return int(np.prod(self.mode_dims))

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)

    @property
    def cutoffs(self) -> tuple:
        if self.kind != "fock":
            raise ValueError("cutoffs are only defined for Fock spaces")
        return tuple(d - 1 for d in self.mode_dims)

    @property
    def is_bipartite(self) -> bool:
        return self.n_a is not None

    def modes_of(self, subsystem) -> tuple:
        idx = _subsystem_index(subsystem)
        self._require_bipartite()
        return tuple(range(self.n_a)) if idx == 0 else tuple(range(self.n_a, self.n_modes))

    def part(self, subsystem) -> "SpaceDescriptor":
        """Descriptor of subsystem ``"A"`` or ``"B"`` on its own."""
        modes = self.modes_of(subsystem)
        return SpaceDescriptor(self.kind, tuple(self.mode_dims[m] for m in modes), role="AB"[_subsystem_index(subsystem)])

    @property
    def dims_ab(self) -> tuple:
        self._require_bipartite()
        return self.part("A").dim, self.part("B").dim

    def _require_bipartite(self):
        if self.n_a is None:
            raise SpaceMismatchError(f"{self} has no A|B bipartition")


def _spin_dim(j: float) -> int:
    two_j = 2 * j
    if two_j < 0 or abs(two_j - round(two_j)) > 1e-12:
        raise ValueError(f"spin quantum number must be a nonnegative half-integer, got {j}")
    return int(round(two_j)) + 1


def _subsystem_index(subsystem) -> int:
    if subsystem in ("A", "a", 0):
        return 0
    if subsystem in ("B", "b", 1):
        return 1
    raise ValueError(f"subsystem must be 'A' or 'B', got {subsystem!r}")


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearOperator:
    space: SpaceDescriptor
    matrix: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(
                f"matrix shape {m.shape} does not match space dimension {self.space.dim}"
            )
        object.__setattr__(self, "matrix", m)

    def dagger(self) -> "LinearOperator":
        return LinearOperator(self.space, self.matrix.conj().T, f"{self.label}^dag")

    def __matmul__(self, other: "LinearOperator") -> "LinearOperator":
        _same_space(self.space, other.space)
        return LinearOperator(self.space, self.matrix @ other.matrix, f"{self.label}{other.label}")


@dataclass(frozen=True)
class Observable(LinearOperator):
    """A Hermitian :class:`LinearOperator`."""

    def __post_init__(self):
        super().__post_init__()
        m = self.matrix
        err = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if err > HERMITIAN_TOL:
            raise ValueError(f"observable {self.label!r} is not Hermitian (max deviation {err:.2e})")

    def shifted(self, offset: float) -> "Observable":
        """``O + offset * 1``; relabels outcomes without changing eigenvectors."""
        return Observable(self.space, self.matrix + offset * np.eye(self.space.dim), self.label)

    def scaled(self, factor: float) -> "Observable":
        return Observable(self.space, factor * self.matrix, self.label)


def _hermitian(space, matrix, label) -> Observable:
    m = np.asarray(matrix, dtype=complex)
    return Observable(space, 0.5 * (m + m.conj().T), label)


def _same_space(s1, s2):
    if s1 != s2:
        raise SpaceMismatchError(f"space mismatch: {s1} vs {s2}")


def embed(local: np.ndarray, space: SpaceDescriptor, mode_index: int) -> np.ndarray:
    """Kronecker-embed a single-mode matrix at ``mode_index`` with identities elsewhere."""
    _check_mode(space, mode_index)
    factors = [
        np.asarray(local) if m == mode_index else np.eye(d)
        for m, d in enumerate(space.mode_dims)
    ]
    return reduce(np.kron, factors)


def _check_mode(space, mode_index):
    if not 0 <= mode_index < space.n_modes:
        raise ValueError(f"mode index {mode_index} out of range for {space.n_modes} mode(s)")


def _require_fock(space):
    if space.kind != "fock":
        raise ValueError(f"operation needs a Fock space, got kind={space.kind!r}")


def _lowering(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def annihilation_op(space: SpaceDescriptor, mode_index: int = 0) -> LinearOperator:
    """Truncated lowering operator ``a`` on one mode: ``a|n> = sqrt(n)|n-1>``."""
    _require_fock(space)
    _check_mode(space, mode_index)
    local = _lowering(space.mode_dims[mode_index])
    return LinearOperator(space, embed(local, space, mode_index), f"a{mode_index}")


def number_op(space: SpaceDescriptor, mode_index: int = 0) -> Observable:
    _require_fock(space)
    _check_mode(space, mode_index)
    local = np.diag(np.arange(space.mode_dims[mode_index], dtype=float))
    return Observable(space, embed(local, space, mode_index), f"n{mode_index}")


def quadrature_op(space: SpaceDescriptor, mode_index: int = 0, theta: float = 0.0) -> Observable:
    """``x_theta = a e^{-i theta} + a^dag e^{i theta}``; theta=0 is x, theta=pi/2 is p."""
    _require_fock(space)
    _check_mode(space, mode_index)
    a = _lowering(space.mode_dims[mode_index])
    local = a * np.exp(-1j * theta) + a.conj().T * np.exp(1j * theta)
    return _hermitian(space, embed(local, space, mode_index), f"x_{theta:.6g}[{mode_index}]")


def x_op(space: SpaceDescriptor, mode_index: int = 0) -> Observable:
    return _relabel(quadrature_op(space, mode_index, 0.0), f"x{mode_index}")


def p_op(space: SpaceDescriptor, mode_index: int = 0) -> Observable:
    # exact construction; cos(pi/2) is not exactly zero
    _require_fock(space)
    _check_mode(space, mode_index)
    a = _lowering(space.mode_dims[mode_index])
    local = 1j * (a.conj().T - a)
    return _hermitian(space, embed(local, space, mode_index), f"p{mode_index}")


def _relabel(op: Observable, label: str) -> Observable:
    return Observable(op.space, op.matrix, label)


def schwinger_spin_ops(space: SpaceDescriptor, mode_plus: int = 0, mode_minus: int = 1):
    """Two-mode boson realisation of spin, returned as ``(J_X, J_Y, J_Z)``.

    ``J_X = (a- a+^dag + a-^dag a+)/2``, ``J_Y = (a- a+^dag - a-^dag a+)/2i`` and
    ``J_Z = (a+^dag a+ - a-^dag a-)/2``.
    """
    _require_fock(space)
    if mode_plus == mode_minus:
        raise ValueError("Schwinger operators need two distinct modes")
    ap = annihilation_op(space, mode_plus).matrix
    am = annihilation_op(space, mode_minus).matrix
    apd, amd = ap.conj().T, am.conj().T
    jx = (am @ apd + amd @ ap) / 2
    jy = (am @ apd - amd @ ap) / 2j
    jz = (apd @ ap - amd @ am) / 2
    return (
        _hermitian(space, jx, "JX"),
        _hermitian(space, jy, "JY"),
        _hermitian(space, jz, "JZ"),
    )


def mode_mix_number_difference(
    space: SpaceDescriptor, basis: str, mode_plus: int = 0, mode_minus: int = 1
) -> Observable:
    """Half the photon-number difference after mixing the two modes.

    ``basis="X"`` mixes as ``(a+ +- a-)/sqrt2``; ``basis="Y"`` as
    ``(a+ -+ i a-)/sqrt2``, i.e. a quarter-wave phase shift before the
    beam splitter.
    """
    _require_fock(space)
    ap = annihilation_op(space, mode_plus).matrix
    am = annihilation_op(space, mode_minus).matrix
    if basis == "X":
        b_plus, b_minus = (ap + am) / np.sqrt(2), (ap - am) / np.sqrt(2)
    elif basis == "Y":
        b_plus, b_minus = (ap - 1j * am) / np.sqrt(2), (ap + 1j * am) / np.sqrt(2)
    else:
        raise ValueError(f"basis must be 'X' or 'Y', got {basis!r}")
    m = (b_plus.conj().T @ b_plus - b_minus.conj().T @ b_minus) / 2
    return _hermitian(space, m, f"J{basis}_mix")


def spin_matrices(j: float):
    """Plain ``(J_X, J_Y, J_Z)`` arrays for spin ``j``."""
    dim = _spin_dim(j)
    m = j - np.arange(dim)
    # <j, m+1| J+ |j, m> sits above the diagonal in the m = j..-j ordering
    jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jm = jp.conj().T
    return (jp + jm) / 2, (jp - jm) / 2j, np.diag(m).astype(complex)


def spin_ladder_ops(j: float, space: SpaceDescriptor | None = None, mode_index: int = 0):
    """Spin-``j`` operators ``(J_X, J_Y, J_Z)``.

    Without ``space`` they act on a fresh ``(2j+1)``-dimensional space;
    otherwise they are embedded at ``mode_index`` of the given spin space.
    """
    dim = _spin_dim(j)
    if space is None:
        space = SpaceDescriptor("spin", (dim,))
    if space.kind != "spin":
        raise ValueError("spin ladder operators need a spin space")
    _check_mode(space, mode_index)
    if space.mode_dims[mode_index] != dim:
        raise SpaceMismatchError(
            f"mode {mode_index} has dimension {space.mode_dims[mode_index]}, spin {j} needs {dim}"
        )
    return tuple(
        _hermitian(space, embed(m, space, mode_index), f"J{axis}[{mode_index}]")
        for m, axis in zip(spin_matrices(j), "XYZ")
    )


def commutator(op1: LinearOperator, op2: LinearOperator) -> LinearOperator:
    """Matrix commutator of the (truncated) operators."""
    _same_space(op1.space, op2.space)
    m = op1.matrix @ op2.matrix - op2.matrix @ op1.matrix
    return LinearOperator(op1.space, m, f"[{op1.label},{op2.label}]")


def local_matrix(op: LinearOperator, space: SpaceDescriptor, subsystem) -> np.ndarray:
    """Matrix of ``op`` on one subsystem of the bipartite ``space``.

    ``op`` may be defined on the subsystem itself, or on the whole space as
    ``O_A (x) 1`` / ``1 (x) O_B``; anything else raises
    :class:`SpaceMismatchError`.
    """
    part = space.part(subsystem)
    if op.space == part:
        if op.space.role not in (None, part.role):
            raise SpaceMismatchError(
                f"operator {op.label!r} was built for subsystem {op.space.role}, not {part.role}"
            )
        return op.matrix
    if op.space != space:
        raise SpaceMismatchError(
            f"operator {op.label!r} lives on {op.space}, not on subsystem {subsystem} of {space}"
        )
    d_a, d_b = space.dims_ab
    m4 = op.matrix.reshape(d_a, d_b, d_a, d_b)
    if _subsystem_index(subsystem) == 0:
        local = m4[:, 0, :, 0]
        rebuilt = np.einsum("ac,bd->abcd", local, np.eye(d_b))
    else:
        local = m4[0, :, 0, :]
        rebuilt = np.einsum("ac,bd->abcd", np.eye(d_a), local)
    scale = max(1.0, float(np.max(np.abs(op.matrix))))
    if np.max(np.abs(rebuilt - m4)) > 1e-12 * scale:
        raise SpaceMismatchError(f"operator {op.label!r} does not act on subsystem {subsystem} only")
    return np.array(local)


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    space: SpaceDescriptor
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.amplitudes).reshape(-1)
        if v.shape != (self.space.dim,):
            raise ValueError(f"amplitude length {v.size} does not match dimension {self.space.dim}")
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state vector is not normalised (norm {norm!r})")
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def normalized(cls, space, amplitudes) -> "StateVector":
        v = np.asarray(amplitudes, dtype=complex).reshape(-1)
        return cls(space, v / np.linalg.norm(v))

    def density(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(self.space, np.outer(v, v.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    space: SpaceDescriptor
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"density matrix shape {m.shape} does not match dimension {self.space.dim}")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITIAN_TOL:
            raise ValueError(f"density matrix is not Hermitian (max deviation {herm:.2e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace is {tr!r}, expected 1")
        lowest = np.linalg.eigvalsh(m)[0]
        if lowest < -POSITIVITY_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {lowest:.3e}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_unnormalized(cls, space, matrix) -> "DensityMatrix":
        m = np.asarray(matrix, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        return cls(space, m / np.trace(m).real)

    def density(self) -> "DensityMatrix":
        return self


State = Union[StateVector, DensityMatrix]


def as_density(state: State) -> DensityMatrix:
    return state.density()


def purity(state: State) -> float:
    if isinstance(state, StateVector):
        return 1.0
    return float(np.real(np.einsum("ij,ji->", state.matrix, state.matrix)))


def mixture(weights: Sequence[float], states: Sequence[State]) -> DensityMatrix:
    """``sum_i w_i rho_i`` for positive weights summing to one."""
    w = np.asarray(weights, dtype=float)
    if len(w) != len(states) or len(w) == 0:
        raise ValueError("need one weight per state")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must be positive and sum to 1, got {w.tolist()}")
    space = states[0].space
    for s in states:
        _same_space(space, s.space)
    total = sum(wi * s.density().matrix for wi, s in zip(w, states))
    return DensityMatrix.from_unnormalized(space, total)


def tensor(state_a: State, state_b: State) -> State:
    """Product state ``A (x) B`` on the bipartite space with A = ``state_a``'s modes."""
    sa, sb = state_a.space, state_b.space
    if sa.kind != sb.kind:
        raise SpaceMismatchError("cannot tensor Fock and spin states")
    space = SpaceDescriptor(sa.kind, sa.mode_dims + sb.mode_dims, n_a=sa.n_modes)
    if isinstance(state_a, StateVector) and isinstance(state_b, StateVector):
        return StateVector.normalized(space, np.kron(state_a.amplitudes, state_b.amplitudes))
    m = np.kron(state_a.density().matrix, state_b.density().matrix)
    return DensityMatrix.from_unnormalized(space, m)


def basis_state(space: SpaceDescriptor, occupations: Sequence[int]) -> StateVector:
    """Product basis state, e.g. Fock ``|n1, n2>`` or spin index (0 is ``m = j``)."""
    if len(occupations) != space.n_modes:
        raise ValueError("need one occupation per mode")
    v = np.zeros(space.dim, dtype=complex)
    v[np.ravel_multi_index(tuple(occupations), space.mode_dims)] = 1.0
    return StateVector(space, v)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


def _moments(state: State, matrix: np.ndarray):
    if isinstance(state, StateVector):
        psi = state.amplitudes
        o_psi = matrix @ psi
        first = np.vdot(psi, o_psi)
        second = np.vdot(o_psi, o_psi).real
    else:
        rho = state.matrix
        first = np.einsum("ij,ji->", rho, matrix)
        second = np.einsum("ij,ji->", rho, matrix @ matrix).real
    return first, second


def _real(value: complex, label: str) -> float:
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise ValueError(f"expectation of {label!r} has imaginary part {value.imag:.3e}")
    return float(value.real)


def expectation(state: State, observable: LinearOperator) -> float:
    """``Tr(rho O)`` for a Hermitian ``O``."""
    _same_space(state.space, observable.space)
    first, _ = _moments(state, observable.matrix)
    return _real(complex(first), observable.label)


def complex_expectation(state: State, operator: LinearOperator) -> complex:
    _same_space(state.space, operator.space)
    if isinstance(state, StateVector):
        psi = state.amplitudes
        return complex(np.vdot(psi, operator.matrix @ psi))
    return complex(np.einsum("ij,ji->", state.matrix, operator.matrix))


def _variance_from(first: float, second: float, label: str) -> float:
    var = second - first * first
    if var < -1e-12 * max(1.0, abs(second)):
        raise ValueError(f"negative variance {var:.3e} for {label!r}")
    return max(var, 0.0)


def variance(state: State, observable: LinearOperator) -> float:
    """``<O^2> - <O>^2`` with ``O^2`` the square of the (truncated) matrix."""
    _same_space(state.space, observable.space)
    first, second = _moments(state, observable.matrix)
    mean = _real(complex(first), observable.label)
    return _variance_from(mean, float(second), observable.label)


def matrix_moments(rho: np.ndarray, matrix: np.ndarray):
    """Mean and variance of a Hermitian matrix in a density matrix (no validation)."""
    first = np.einsum("ij,ji->", rho, matrix)
    second = np.einsum("ij,ji->", rho, matrix @ matrix).real
    mean = _real(complex(first), "matrix")
    return mean, _variance_from(mean, float(second), "matrix")


# ---------------------------------------------------------------------------
# Partial trace and conditioning
# ---------------------------------------------------------------------------


def _amplitude_matrix(state: StateVector) -> np.ndarray:
    d_a, d_b = state.space.dims_ab
    return state.amplitudes.reshape(d_a, d_b)


def _reduced_matrix(state: State, subsystem) -> np.ndarray:
    d_a, d_b = state.space.dims_ab
    idx = _subsystem_index(subsystem)
    if isinstance(state, StateVector):
        psi = _amplitude_matrix(state)
        return psi @ psi.conj().T if idx == 0 else psi.T @ psi.conj()
    rho4 = state.matrix.reshape(d_a, d_b, d_a, d_b)
    return np.einsum("ajbj->ab", rho4) if idx == 0 else np.einsum("jajb->ab", rho4)


def reduce_to_subsystem(state: State, subsystem) -> DensityMatrix:
    """Partial trace onto ``"A"`` or ``"B"``."""
    part = state.space.part(subsystem)
    return DensityMatrix.from_unnormalized(part, _reduced_matrix(state, subsystem))


def conditional_on_isometry(state: State, basis: np.ndarray):
    """Unnormalised ``Tr_B[(1 (x) V V^dag) rho]`` for B-side columns ``V``.

    Returns ``(probability, matrix)``; the matrix is Hermitian with trace
    equal to the probability.
    """
    d_a, d_b = state.space.dims_ab
    v = np.asarray(basis, dtype=complex).reshape(d_b, -1)
    if isinstance(state, StateVector):
        m = _amplitude_matrix(state) @ v.conj()
        cond = m @ m.conj().T
    else:
        proj = v @ v.conj().T
        rho4 = state.matrix.reshape(d_a, d_b, d_a, d_b)
        cond = np.einsum("akbj,jk->ab", rho4, proj)
    cond = 0.5 * (cond + cond.conj().T)
    return float(np.trace(cond).real), cond


def condition_on_projector(state: State, projector, threshold: float = 1e-12):
    """Probability and conditional A-state for a projective outcome on B.

    Args:
        state: bipartite state.
        projector: Hermitian projector on B, given as an array, a B-space
            operator, or a full-space ``1 (x) Pi`` operator.
        threshold: probabilities below this raise :class:`EmptyBranchError`.

    Returns:
        ``(probability, DensityMatrix on A)``.
    """
    space = state.space
    d_a, d_b = space.dims_ab
    if isinstance(projector, LinearOperator):
        pi = local_matrix(projector, space, "B")
    else:
        pi = np.asarray(projector, dtype=complex)
        if pi.shape != (d_b, d_b):
            raise SpaceMismatchError(f"projector shape {pi.shape} does not match B dimension {d_b}")
    if np.max(np.abs(pi @ pi - pi)) > 1e-10 or np.max(np.abs(pi - pi.conj().T)) > 1e-10:
        raise ValueError("B_projector is not an orthogonal projector")
    if isinstance(state, StateVector):
        cond = _amplitude_matrix(state) @ pi.T @ _amplitude_matrix(state).conj().T
    else:
        rho4 = state.matrix.reshape(d_a, d_b, d_a, d_b)
        cond = np.einsum("akbj,jk->ab", rho4, pi)
    prob = float(np.trace(cond).real)
    if prob < threshold:
        raise EmptyBranchError(f"empty branch: outcome probability {prob:.3e} below {threshold:.1e}")
    return prob, DensityMatrix.from_unnormalized(space.part("A"), cond)


def photon_number_subspace(space: SpaceDescriptor, max_total: int) -> np.ndarray:
    """Indices of Fock basis states whose total photon number is at most ``max_total``."""
    _require_fock(space)
    grids = np.indices(space.mode_dims).reshape(space.n_modes, -1)
    return np.flatnonzero(grids.sum(axis=0) <= max_total)
