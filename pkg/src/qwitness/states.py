"""State factories: vacuum, coherent, squeezed, two-mode squeezed, spin states, mixtures.

Every Fock-space factory checks that the cutoff keeps all but ``tail_tol``
of the probability mass and raises :class:`TruncationError` otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.linalg import expm
from scipy.special import comb, gammaln
from scipy.stats import poisson

from .errors import TruncationError
from .hilbert import (
    DensityMatrix,
    SpaceDescriptor,
    State,
    StateVector,
    _lowering,
    mixture,
)

TAIL_TOL = 1e-8
MIN_CUTOFF = 30
_MAX_AUTO_CUTOFF = 2000


def _check_tail(tail: float, cutoff: int, what: str, tol: float):
    if tail >= tol:
        raise TruncationError(
            f"truncation overflow: {what} at cutoff {cutoff} discards mass {tail:.3e}, "
            f"tolerance is {tol:.0e}"
        )


def _smallest_cutoff(tail_of, tol: float, floor: int = 0) -> int:
    n = floor
    while tail_of(n) >= tol:
        n += 1
        if n > _MAX_AUTO_CUTOFF:
            raise TruncationError(f"no cutoff below {_MAX_AUTO_CUTOFF} reaches tail mass {tol:.0e}")
    return n


# ---------------------------------------------------------------------------
# Fock amplitudes
# ---------------------------------------------------------------------------


def coherent_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    n = np.arange(cutoff + 1)
    if alpha == 0:
        out = np.zeros(cutoff + 1, dtype=complex)
        out[0] = 1.0
        return out
    log_mag = -abs(alpha) ** 2 / 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_tail(alpha: complex, cutoff: int) -> float:
    return float(poisson.sf(cutoff, abs(alpha) ** 2))


def _squeezed_log_weights(r: float, n_pairs: int):
    k = np.arange(n_pairs)
    t = abs(math.tanh(r))
    if t == 0:
        logw = np.full(n_pairs, -np.inf)
        logw[0] = 0.0
        return logw
    return (
        2 * k * np.log(t)
        + gammaln(2 * k + 1)
        - 2 * k * np.log(2)
        - 2 * gammaln(k + 1)
        - np.log(math.cosh(r))
    )


def squeezed_amplitudes(r: float, cutoff: int) -> np.ndarray:
    """Fock amplitudes of squeezed vacuum with ``Var(x) = e^{2r}``, ``Var(p) = e^{-2r}``.

    Only even photon numbers are populated: ``c_{2k} = tanh(r)^k sqrt((2k)!) / (2^k k! sqrt(cosh r))``.
    Negative ``r`` squeezes ``x`` instead of ``p``.
    """
    out = np.zeros(cutoff + 1, dtype=complex)
    k = np.arange(cutoff // 2 + 1)
    logw = _squeezed_log_weights(r, k.size)
    sign = np.sign(math.tanh(r)) if r != 0 else 1.0
    out[2 * k] = np.exp(0.5 * logw) * sign**k
    return out


def squeezed_tail(r: float, cutoff: int) -> float:
    first = cutoff // 2 + 1
    t2 = math.tanh(r) ** 2
    if t2 == 0:
        return 0.0
    # terms decay like t2^k / sqrt(k); stop once they no longer matter
    extra = int(60 / max(-math.log(t2), 1e-6)) + 64
    logw = _squeezed_log_weights(r, first + extra)[first:]
    return float(np.exp(logw).sum())


def tmss_coefficients(r: float, cutoff: int) -> np.ndarray:
    """Schmidt coefficients ``c_n = tanh(r)^n / cosh(r)`` for ``n = 0..cutoff``."""
    n = np.arange(cutoff + 1)
    return math.tanh(r) ** n / math.cosh(r)


def tmss_tail(r: float, cutoff: int) -> float:
    return math.tanh(r) ** (2 * (cutoff + 1))


# ---------------------------------------------------------------------------
# Factories
# ---------------------------------------------------------------------------


def vacuum(cutoff: int = MIN_CUTOFF) -> StateVector:
    return number(0, cutoff)


def number(n: int, cutoff: int | None = None) -> StateVector:
    if n < 0:
        raise ValueError("photon number must be nonnegative")
    if cutoff is None:
        cutoff = max(MIN_CUTOFF, n + 2)
    if cutoff < n:
        _check_tail(1.0, cutoff, f"number state |{n}>", TAIL_TOL)
    v = np.zeros(cutoff + 1, dtype=complex)
    v[n] = 1.0
    return StateVector(SpaceDescriptor.fock(cutoff), v)


def coherent(alpha: complex, cutoff: int | None = None, tail_tol: float = TAIL_TOL) -> StateVector:
    if cutoff is None:
        cutoff = _smallest_cutoff(lambda c: coherent_tail(alpha, c), tail_tol, MIN_CUTOFF)
    _check_tail(coherent_tail(alpha, cutoff), cutoff, f"coherent({alpha})", tail_tol)
    return StateVector.normalized(SpaceDescriptor.fock(cutoff), coherent_amplitudes(alpha, cutoff))


def squeezed(r: float, cutoff: int | None = None, tail_tol: float = TAIL_TOL) -> StateVector:
    if not math.isfinite(r):
        raise ValueError("squeezing parameter must be finite")
    if cutoff is None:
        cutoff = _smallest_cutoff(lambda c: squeezed_tail(r, c), tail_tol, MIN_CUTOFF)
    _check_tail(squeezed_tail(r, cutoff), cutoff, f"squeezed(r={r})", tail_tol)
    return StateVector.normalized(SpaceDescriptor.fock(cutoff), squeezed_amplitudes(r, cutoff))


def tmss(r: float, cutoff: int | None = None, tail_tol: float = TAIL_TOL) -> StateVector:
    """Two-mode squeezed vacuum ``sum_n c_n |n>_A |n>_B``."""
    if not math.isfinite(r):
        raise ValueError("squeezing parameter must be finite")
    if cutoff is None:
        cutoff = _smallest_cutoff(lambda c: tmss_tail(r, c), tail_tol, MIN_CUTOFF)
    _check_tail(tmss_tail(r, cutoff), cutoff, f"tmss(r={r})", tail_tol)
    c = tmss_coefficients(r, cutoff)
    space = SpaceDescriptor.fock(cutoff, cutoff, n_a=1)
    return StateVector.normalized(space, np.diag(c).reshape(-1))


def tmss_pair(
    r: float, r2: float | None = None, cutoff: int | None = None, tail_tol: float = TAIL_TOL
) -> StateVector:
    """Two independent TMSS pairs on modes ``(a+, a-, b+, b-)``; A holds ``a+, a-``.

    The pair ``(a+, b+)`` has squeezing ``r`` and ``(a-, b-)`` has ``r2``
    (default ``r``). This is the four-mode state on which Schwinger spins of
    A and B become EPR-correlated.
    """
    r2 = r if r2 is None else r2
    if cutoff is None:
        cutoff = _smallest_cutoff(lambda c: tmss_tail(r, c) + tmss_tail(r2, c), tail_tol, 1)
    _check_tail(tmss_tail(r, cutoff) + tmss_tail(r2, cutoff), cutoff, "tmss_pair", tail_tol)
    d = cutoff + 1
    cp = tmss_coefficients(r, cutoff)
    cm = tmss_coefficients(r2, cutoff)
    psi = np.zeros((d, d, d, d), dtype=complex)
    n = np.arange(d)
    psi[n[:, None], n[None, :], n[:, None], n[None, :]] = np.outer(cp, cm)
    space = SpaceDescriptor.fock(cutoff, cutoff, cutoff, cutoff, n_a=2)
    return StateVector.normalized(space, psi.reshape(-1))


def spin_coherent(j: float, theta: float = 0.0, phi: float = 0.0) -> StateVector:
    """Spin coherent state pointing along ``(sin t cos f, sin t sin f, cos t)``."""
    space = SpaceDescriptor.spin(j)
    two_j = space.mode_dims[0] - 1
    k = np.arange(two_j + 1)  # k = j - m
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    amp = np.sqrt(comb(two_j, k)) * np.power(c, two_j - k) * np.power(s, k) * np.exp(1j * k * phi)
    return StateVector.normalized(space, amp)


def singlet(j: float = 0.5) -> StateVector:
    """Total-spin-zero state of two spin-``j`` particles."""
    space = SpaceDescriptor.spin(j, j, n_a=1)
    d = space.mode_dims[0]
    psi = np.zeros((d, d), dtype=complex)
    for k in range(d):
        psi[k, d - 1 - k] = (-1) ** k
    return StateVector.normalized(space, psi.reshape(-1))


def displaced_squeezed(x0: float, r: float, cutoff: int, pad: int | None = None) -> StateVector:
    """Squeezed vacuum displaced to ``<x> = x0``, computed on a padded space then cut."""
    if pad is None:
        pad = cutoff + int(x0**2) + 40
    big = squeezed_amplitudes(r, pad)
    big /= np.linalg.norm(big)
    alpha = x0 / 2
    a = _lowering(pad + 1)
    shifted = expm(alpha * a.conj().T - np.conj(alpha) * a) @ big
    tail = float(np.sum(np.abs(shifted[cutoff + 1 :]) ** 2))
    _check_tail(tail, cutoff, f"displaced_squeezed(x0={x0}, r={r})", TAIL_TOL)
    return StateVector.normalized(SpaceDescriptor.fock(cutoff), shifted[: cutoff + 1])


def sscopic_mixture_fixture(
    S: float, count: int = 5, seed: int = 0, max_shift: float = 2.0, cutoff: int | None = None
) -> DensityMatrix:
    """Mixture of displaced x-localised squeezed states, each narrower than ``S``.

    Every component has x standard deviation ``sigma = min(S/4, 1)``, so its
    4-sigma width is at most ``S``. Centres are uniform in
    ``[-max_shift, max_shift]`` and weights uniform in ``[0.5, 1.5]`` before
    normalisation; both come from ``numpy.random.default_rng(seed)``.
    """
    if S <= 0:
        raise ValueError("S must be positive")
    rng = np.random.default_rng(seed)
    sigma = min(S / 4, 1.0)
    r = math.log(sigma)
    centres = rng.uniform(-max_shift, max_shift, size=count)
    weights = rng.uniform(0.5, 1.5, size=count)
    weights /= weights.sum()
    if cutoff is None:
        cutoff = _fixture_cutoff(centres, r)
    comps = [displaced_squeezed(float(x0), r, cutoff) for x0 in centres]
    return mixture(weights, comps)


def _fixture_cutoff(centres, r) -> int:
    pad = _smallest_cutoff(lambda c: squeezed_tail(r, c), TAIL_TOL * 1e-4, MIN_CUTOFF)
    pad += int(max(abs(centres)) ** 2) + 40
    need = MIN_CUTOFF
    for x0 in centres:
        big = squeezed_amplitudes(r, pad)
        big /= np.linalg.norm(big)
        a = _lowering(pad + 1)
        v = expm((x0 / 2) * (a.conj().T - a)) @ big
        tails = np.cumsum(np.abs(v[::-1]) ** 2)[::-1]  # tails[k] = mass at n >= k
        need = max(need, int(np.argmax(tails < TAIL_TOL / 2)))
    return need


# ---------------------------------------------------------------------------
# Declarative specs
# ---------------------------------------------------------------------------

_FACTORIES = {
    "vacuum": ("fock", ()),
    "number": ("fock", ("n",)),
    "coherent": ("fock", ("alpha",)),
    "squeezed": ("fock", ("r",)),
    "tmss": ("fock", ("r",)),
    "tmss_pair": ("fock", ("r", "r2")),
    "spin_coherent": ("spin", ("j", "theta", "phi")),
    "singlet": ("spin", ("j",)),
    "mixture": (None, ()),
}


@dataclass(frozen=True)
class StateSpec:
    """Declarative description of a state.

    Text form is ``name:key=value,...`` (for example ``tmss:r=0.8,cutoff=40``);
    mixtures only have the JSON form
    ``{"name": "mixture", "components": [{"weight": w, "state": {...}}, ...]}``.
    """

    name: str
    params: dict = field(default_factory=dict)
    cutoff: int | None = None
    components: tuple = ()

    def __post_init__(self):
        if self.name not in _FACTORIES:
            raise ValueError(f"unknown state {self.name!r}; choose from {sorted(_FACTORIES)}")
        allowed = set(_FACTORIES[self.name][1])
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"state {self.name!r} does not take parameters {sorted(unknown)}")
        for key in ("r", "r2"):
            if key in self.params and not math.isfinite(float(self.params[key])):
                raise ValueError(f"{key} must be finite")
        if self.name == "mixture":
            if not self.components:
                raise ValueError("a mixture needs at least one component")
            w = np.array([c[0] for c in self.components], dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"mixture weights must be positive and sum to 1, got {w.tolist()}")
            kinds = {c[1].kind for c in self.components}
            if len(kinds) > 1:
                raise ValueError("mixture branches mix Fock and spin states")

    @property
    def kind(self) -> str:
        if self.name == "mixture":
            return self.components[0][1].kind
        return _FACTORIES[self.name][0]

    def with_cutoff(self, cutoff: int) -> "StateSpec":
        if self.name == "mixture":
            comps = tuple((w, c.with_cutoff(cutoff)) for w, c in self.components)
            return replace(self, cutoff=cutoff, components=comps)
        return replace(self, cutoff=cutoff)

    def with_param(self, key: str, value) -> "StateSpec":
        params = dict(self.params)
        params[key] = value
        return replace(self, params=params)

    @classmethod
    def parse(cls, text: str) -> "StateSpec":
        text = text.strip()
        if text.startswith("{"):
            return cls.from_dict(json.loads(text))
        name, _, rest = text.partition(":")
        params: dict[str, Any] = {}
        cutoff = None
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed state parameter {item!r}; expected key=value")
            key = key.strip()
            if key == "cutoff":
                cutoff = int(value)
            else:
                params[key] = _parse_number(value.strip())
        return cls(name.strip(), params, cutoff)

    @classmethod
    def from_dict(cls, data: dict) -> "StateSpec":
        data = dict(data)
        name = data.pop("name")
        cutoff = data.pop("cutoff", None)
        comps = tuple(
            (float(c["weight"]), cls.from_dict(c["state"])) for c in data.pop("components", [])
        )
        params = {k: _parse_number(v) if isinstance(v, str) else v for k, v in data.items()}
        return cls(name, params, None if cutoff is None else int(cutoff), comps)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name}
        for k, v in self.params.items():
            out[k] = _format_number(v)
        if self.cutoff is not None:
            out["cutoff"] = self.cutoff
        if self.components:
            out["components"] = [{"weight": w, "state": c.to_dict()} for w, c in self.components]
        return out

    def to_text(self) -> str:
        if self.name == "mixture":
            return json.dumps(self.to_dict(), sort_keys=True)
        items = [f"{k}={_format_number(v)}" for k, v in self.params.items()]
        if self.cutoff is not None:
            items.append(f"cutoff={self.cutoff}")
        return self.name + (":" + ",".join(items) if items else "")


def _parse_number(value: str):
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return complex(value.replace(" ", ""))


def _format_number(v):
    if isinstance(v, complex):
        return str(v).strip("()")
    return v


def default_cutoff(spec: StateSpec, tail_tol: float = TAIL_TOL) -> int | None:
    """The cutoff :func:`build` would pick when ``spec.cutoff`` is unset."""
    p = spec.params
    if spec.kind == "spin":
        return None
    if spec.cutoff is not None:
        return spec.cutoff
    if spec.name == "vacuum":
        return MIN_CUTOFF
    if spec.name == "number":
        return max(MIN_CUTOFF, int(p["n"]) + 2)
    if spec.name == "coherent":
        alpha = complex(p.get("alpha", 0))
        return _smallest_cutoff(lambda c: coherent_tail(alpha, c), tail_tol, MIN_CUTOFF)
    if spec.name == "squeezed":
        r = float(p.get("r", 0))
        return _smallest_cutoff(lambda c: squeezed_tail(r, c), tail_tol, MIN_CUTOFF)
    if spec.name == "tmss":
        r = float(p.get("r", 0))
        return _smallest_cutoff(lambda c: tmss_tail(r, c), tail_tol, MIN_CUTOFF)
    if spec.name == "tmss_pair":
        r = float(p.get("r", 0))
        r2 = float(p.get("r2", r))
        return _smallest_cutoff(lambda c: tmss_tail(r, c) + tmss_tail(r2, c), tail_tol, 1)
    if spec.name == "mixture":
        return max(default_cutoff(c, tail_tol) for _, c in spec.components)
    raise ValueError(f"no default cutoff for {spec.name!r}")


def build(spec: StateSpec, tail_tol: float = TAIL_TOL) -> State:
    """Construct the state described by ``spec``.

    Pure states come back as :class:`StateVector`, mixtures as
    :class:`DensityMatrix`.
    """
    p = spec.params
    cutoff = spec.cutoff
    if spec.name == "vacuum":
        return vacuum(MIN_CUTOFF if cutoff is None else cutoff)
    if spec.name == "number":
        return number(int(p["n"]), cutoff)
    if spec.name == "coherent":
        return coherent(complex(p.get("alpha", 0)), cutoff, tail_tol)
    if spec.name == "squeezed":
        return squeezed(float(p.get("r", 0)), cutoff, tail_tol)
    if spec.name == "tmss":
        return tmss(float(p.get("r", 0)), cutoff, tail_tol)
    if spec.name == "tmss_pair":
        r = float(p.get("r", 0))
        return tmss_pair(r, float(p.get("r2", r)), cutoff, tail_tol)
    if spec.name == "spin_coherent":
        return spin_coherent(float(p.get("j", 0.5)), float(p.get("theta", 0)), float(p.get("phi", 0)))
    if spec.name == "singlet":
        return singlet(float(p.get("j", 0.5)))
    if spec.name == "mixture":
        common = cutoff if cutoff is not None else default_cutoff(spec, tail_tol)
        branches = [
            build(c if common is None else c.with_cutoff(common), tail_tol)
            for _, c in spec.components
        ]
        return mixture([w for w, _ in spec.components], branches)
    raise ValueError(f"unknown state {spec.name!r}")
