"""Declarative description of the physical problem.

A run is specified by a system triple ``(S, L, H)`` with initial vector
``eta``, plus a field state: vacuum (``None``), a single-photon wavepacket
(:class:`Pulse`), or a superposition of coherent fields
(:class:`CoherentModes`).  Mode functions are stored as samples on a uniform
grid and evaluated by linear interpolation, so integrators may query them at
arbitrary step times.  All values are immutable after validated construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import operators as ops
from .errors import DomainError, EmbeddingError, GridError, ModelError

#: Pulse and mode normalization tolerance for the trapezoid quadrature.
NORM_ATOL = 1e-6

#: Gram matrices with condition number above this are rejected as degenerate.
GRAM_COND_LIMIT = 1e8


@dataclass(frozen=True)
class Diagnostic:
    """One invariant violation found by :func:`validate`."""

    code: str
    message: str
    residual: float

    def __str__(self):
        return f"{self.code}: {self.message} (max residual {self.residual:.3e})"


def validate(model, atol: float = ops.DEFAULT_ATOL) -> list[Diagnostic]:
    """Check all :class:`SystemModel` invariants.

    Returns an empty list when the model is valid, otherwise one
    :class:`Diagnostic` per violation with the worst-entry residual.
    Recognized codes are ``NonUnitaryS``, ``NonHermitianH`` and
    ``UnnormalizedEta``.
    """
    out = []
    d = model.dim
    r = ops.max_entry(ops.dag(model.S) @ model.S - ops.identity(d))
    if r > atol:
        out.append(Diagnostic("NonUnitaryS", "scattering matrix S is not unitary", r))
    r = ops.max_entry(model.H - ops.dag(model.H))
    if r > atol:
        out.append(Diagnostic("NonHermitianH", "Hamiltonian H is not Hermitian", r))
    r = abs(float(np.linalg.norm(model.eta)) - 1.0)
    if r > atol:
        out.append(Diagnostic("UnnormalizedEta", "initial vector eta is not normalized", r))
    return out


@dataclass(frozen=True)
class SystemModel:
    """System triple ``(S, L, H)`` with initial vector ``eta``.

    Construction validates unitarity of ``S``, hermiticity of ``H`` and
    normalization of ``eta`` to ``atol`` and raises :class:`ModelError`
    listing every violation.
    """

    S: np.ndarray
    L: np.ndarray
    H: np.ndarray
    eta: np.ndarray
    atol: float = ops.DEFAULT_ATOL

    def __post_init__(self):
        S = ops.as_operator(self.S, "S")
        L = ops.as_operator(self.L, "L")
        H = ops.as_operator(self.H, "H")
        eta = np.asarray(self.eta, dtype=complex).reshape(-1)
        d = S.shape[0]
        if L.shape[0] != d or H.shape[0] != d or eta.shape[0] != d:
            raise ModelError(
                f"S, L, H, eta dimensions disagree: {S.shape[0]}, {L.shape[0]}, "
                f"{H.shape[0]}, {eta.shape[0]}"
            )
        for name, m in (("S", S), ("L", L), ("H", H), ("eta", eta)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        diags = validate(self, self.atol)
        if diags:
            raise ModelError("; ".join(str(x) for x in diags), diags)

    @property
    def dim(self) -> int:
        return self.S.shape[0]


def _uniform_step(grid: np.ndarray) -> float:
    steps = np.diff(grid)
    if len(steps) == 0 or np.any(steps <= 0):
        raise GridError("grid must be strictly increasing with at least two nodes")
    h = float(steps[0])
    if np.max(np.abs(steps - h)) > 1e-9 * max(h, 1.0):
        raise GridError("grid must be uniformly spaced")
    return h


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.full(len(grid), _uniform_step(grid))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True)
class Pulse:
    """Single-photon temporal wavepacket, sampled on a uniform grid.

    ``samples[k]`` is the complex mode amplitude at ``grid[k]`` in units of
    s^(-1/2); the pulse vanishes beyond the grid except for a declared
    analytic ``tail_norm`` equal to the squared-amplitude integral past the
    horizon.  The quadrature norm (trapezoid over the grid plus the tail)
    must be 1 within ``NORM_ATOL``; family builders renormalize exactly.
    """

    grid: np.ndarray
    samples: np.ndarray
    tail_norm: float = 0.0
    kind: str = "samples"

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        samples = np.asarray(self.samples, dtype=complex)
        if grid.ndim != 1 or samples.shape != grid.shape:
            raise GridError("pulse grid and samples must be 1-D arrays of matching length")
        if grid[0] != 0.0:
            raise GridError("pulse grid must start at t = 0")
        _uniform_step(grid)
        if self.tail_norm < -1e-15:
            raise DomainError("tail_norm must be non-negative")
        for name, m in (("grid", grid), ("samples", samples)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        norm = self.squared_norm()
        if abs(norm - 1.0) > NORM_ATOL:
            raise ModelError(
                f"pulse is not normalized: trapezoid + tail gives {norm:.8f}"
            )

    @property
    def grid_dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def squared_norm(self) -> float:
        return float(np.trapezoid(np.abs(self.samples) ** 2, self.grid)) + float(self.tail_norm)

    def value(self, t):
        """Amplitude at time ``t`` (scalar or array), zero past the horizon."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("pulse evaluated at negative time")
        return np.interp(t, self.grid, self.samples, left=0.0, right=0.0)

    @cached_property
    def _tail_on_grid(self) -> np.ndarray:
        # r[k] = trapezoid of |xi|^2 over [grid[k], horizon] + tail_norm
        dens = np.abs(self.samples) ** 2
        h = self.grid_dt
        cells = 0.5 * h * (dens[1:] + dens[:-1])
        r = np.zeros(len(self.grid))
        r[:-1] = np.cumsum(cells[::-1])[::-1]
        return r + self.tail_norm

    def tail(self, t) -> float:
        return pulse_tail(self, t)


def pulse_tail(pulse: Pulse, t) -> float:
    """Residual norm ``r(t)``: squared-amplitude integral over ``[t, inf)``.

    Computed by trapezoid on ``[t, horizon]`` plus the declared analytic
    tail; ``r(0) = 1`` and ``r`` is non-increasing.  For ``t`` past the
    horizon the declared tail norm is returned.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("tail requested at negative time")
    r = np.interp(t, pulse.grid, pulse._tail_on_grid, right=pulse.tail_norm)
    return float(r) if r.ndim == 0 else r


def _build_pulse(grid, samples, tail_norm, kind) -> Pulse:
    # Renormalize so the trapezoid + tail quadrature is exactly 1; for smooth
    # families the adjustment is O(grid_dt^2), for discontinuous ones it
    # absorbs the jump-cell quadrature error.
    raw = float(np.trapezoid(np.abs(samples) ** 2, grid)) + tail_norm
    c = 1.0 / math.sqrt(raw)
    return Pulse(grid=grid, samples=samples * c, tail_norm=tail_norm * c * c, kind=kind)


def exponential_pulse(gamma: float = 1.0, horizon: float = 40.0, grid_dt: float = 1e-3) -> Pulse:
    """Decaying exponential ``xi(t) = sqrt(gamma) exp(-gamma t / 2)``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    grid = _time_grid(horizon, grid_dt)
    samples = math.sqrt(gamma) * np.exp(-0.5 * gamma * grid)
    return _build_pulse(grid, samples.astype(complex), math.exp(-gamma * horizon), "exponential")


def rising_exponential_pulse(gamma: float, support: float, grid_dt: float = 1e-3) -> Pulse:
    """Rising exponential on ``[0, support]``, zero afterwards."""
    if gamma <= 0 or support <= 0:
        raise DomainError("gamma and support must be positive")
    grid = _time_grid(support, grid_dt)
    amp = math.sqrt(gamma / (1.0 - math.exp(-gamma * support)))
    samples = amp * np.exp(0.5 * gamma * (grid - support))
    return _build_pulse(grid, samples.astype(complex), 0.0, "rising_exponential")


def gaussian_pulse(center: float, sigma: float, horizon: float | None = None,
                   grid_dt: float = 1e-3) -> Pulse:
    """Gaussian wavepacket with ``|xi|^2`` a normal density at ``center``.

    Mass lost by truncating to ``[0, horizon]`` on the left is absorbed by
    renormalization; keep ``center`` a few sigma inside the window.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    if horizon is None:
        horizon = center + 8.0 * sigma
    grid = _time_grid(horizon, grid_dt)
    samples = (2.0 * math.pi * sigma**2) ** (-0.25) * np.exp(-((grid - center) ** 2) / (4.0 * sigma**2))
    tail = 0.5 * math.erfc((horizon - center) / (math.sqrt(2.0) * sigma))
    return _build_pulse(grid, samples.astype(complex), tail, "gaussian")


def square_pulse(start: float, stop: float, grid_dt: float = 1e-3) -> Pulse:
    """Constant amplitude on ``[start, stop]``, zero elsewhere."""
    if not 0 <= start < stop:
        raise DomainError("need 0 <= start < stop")
    grid = _time_grid(stop, grid_dt)
    samples = np.where((grid >= start) & (grid <= stop), (stop - start) ** -0.5, 0.0)
    return _build_pulse(grid, samples.astype(complex), 0.0, "square")


def pulse_from_samples(grid, samples, tail_norm: float = 0.0, normalize: bool = False) -> Pulse:
    """Wrap raw ``(t, xi(t))`` samples; optionally renormalize to unit norm."""
    grid = np.asarray(grid, dtype=float)
    samples = np.asarray(samples, dtype=complex)
    if normalize:
        return _build_pulse(grid, samples, tail_norm, "samples")
    return Pulse(grid=grid, samples=samples, tail_norm=tail_norm, kind="samples")


def _time_grid(horizon: float, grid_dt: float) -> np.ndarray:
    """Uniform grid from 0 covering ``horizon``, extended to a full cell."""
    if grid_dt <= 0 or horizon <= 0:
        raise DomainError("horizon and grid_dt must be positive")
    n = max(1, int(math.ceil(horizon / grid_dt - 1e-9)))
    return np.linspace(0.0, n * grid_dt, n + 1)


@dataclass(frozen=True)
class CoherentModes:
    """Superposition of coherent fields: modes ``f_j`` with weights ``alpha_j``.

    Samples share one uniform grid; modes vanish beyond it unless pairwise
    analytic tail integrals ``int_horizon^inf conj(f_j) f_k`` are declared.
    Constant-family modes additionally carry exact overlap formulas, since
    trapezoid quadrature cannot resolve their jump discontinuities to the
    normalization tolerance.  With ``normalize_weights`` the weights are
    rescaled at construction so that ``sum conj(a_j) a_k g_jk = 1``.
    """

    grid: np.ndarray
    samples: np.ndarray          # shape (n, len(grid))
    weights: np.ndarray          # shape (n,), all non-zero
    tail_overlaps: np.ndarray | None = None
    kinds: tuple = ()
    params: tuple = ()
    check_conditioning: bool = True
    normalize_weights: bool = False

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        samples = np.atleast_2d(np.asarray(self.samples, dtype=complex))
        weights = np.asarray(self.weights, dtype=complex).reshape(-1)
        if grid.ndim != 1 or samples.shape[1] != grid.shape[0]:
            raise GridError("mode samples must share the mode grid")
        if grid[0] != 0.0:
            raise GridError("mode grid must start at t = 0")
        _uniform_step(grid)
        n = samples.shape[0]
        if weights.shape[0] != n:
            raise ModelError(f"{n} modes but {weights.shape[0]} weights")
        if np.any(np.abs(weights) == 0.0):
            raise ModelError("zero superposition weights are not allowed; drop the component")
        tails = self.tail_overlaps
        if tails is not None:
            tails = np.asarray(tails, dtype=complex)
            if tails.shape != (n, n):
                raise ModelError("tail_overlaps must be an n x n matrix")
            tails.setflags(write=False)
        kinds = tuple(self.kinds) if self.kinds else ("samples",) * n
        params = tuple(self.params) if self.params else (None,) * n
        for name, val in (("grid", grid), ("samples", samples),
                          ("tail_overlaps", tails), ("kinds", kinds), ("params", params)):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "weights", weights)
        g = self.gram
        if ops.max_entry(g - ops.dag(g)) > 1e-10:
            raise ModelError("gram matrix is not Hermitian")
        if ops.max_entry(np.diag(g) - 1.0) > 1e-10:
            raise ModelError("gram matrix diagonal must be 1")
        if np.min(np.linalg.eigvalsh(g)) < -1e-10:
            raise ModelError("gram matrix is not positive semidefinite")
        if self.check_conditioning and np.linalg.cond(g) > GRAM_COND_LIMIT:
            raise ModelError(
                "gram matrix is near-degenerate (nearly identical modes); merge the components"
            )
        if self.normalize_weights:
            weights = weights / math.sqrt(self.weight_norm())
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        norm = self.weight_norm()
        if abs(norm - 1.0) > NORM_ATOL:
            raise ModelError(
                f"superposition weights are not normalized: sum alpha_j* alpha_k g_jk = {norm:.8f}"
            )

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def grid_dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def weight_norm(self) -> float:
        a = self.weights
        return float(np.real(np.conj(a) @ self.gram @ a))

    def values(self, t) -> np.ndarray:
        """All mode amplitudes at time ``t``; shape (n,) or (n, len(t))."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("mode evaluated at negative time")
        return np.stack([
            np.interp(t, self.grid, self.samples[j], left=0.0, right=0.0)
            for j in range(self.n)
        ])

    # -- pairwise L2 machinery ------------------------------------------------

    @cached_property
    def _cum_pair(self) -> np.ndarray:
        """Cumulative trapezoid of conj(f_j) f_k on the grid, shape (n, n, K)."""
        integrand = np.einsum("jt,kt->jkt", np.conj(self.samples), self.samples)
        h = self.grid_dt
        cells = 0.5 * h * (integrand[..., 1:] + integrand[..., :-1])
        out = np.zeros_like(integrand)
        out[..., 1:] = np.cumsum(cells, axis=-1)
        return out

    def _analytic_pair(self, j: int, k: int):
        """Exact ``t -> int_0^t conj(f_j) f_k`` when both modes are constant."""
        if self.kinds[j] != "constant" or self.kinds[k] != "constant":
            return None
        pj, pk = self.params[j], self.params[k]
        lo = max(pj["start"], pk["start"])
        hi = min(pj["stop"], pk["stop"])
        amp = np.conj(pj["amplitude"]) * pk["amplitude"]

        def cum(t):
            return amp * np.clip(np.minimum(t, hi) - lo, 0.0, None)

        return cum

    def pair_integral(self, j: int, k: int, t=None):
        """``int_0^t conj(f_j) f_k ds``; full-line integral (grid + declared
        tail) when ``t`` is None."""
        exact = self._analytic_pair(j, k)
        if t is None:
            tail = 0.0 if self.tail_overlaps is None else complex(self.tail_overlaps[j, k])
            if exact is not None:
                return complex(exact(self.horizon)) + tail
            return complex(self._cum_pair[j, k, -1]) + tail
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("pair integral requested at negative time")
        if exact is not None:
            v = exact(t)
        else:
            v = np.interp(t, self.grid, self.cum_pair_view(j, k))
        return complex(v) if v.ndim == 0 else v

    def cum_pair_view(self, j: int, k: int) -> np.ndarray:
        return self._cum_pair[j, k]

    @cached_property
    def gram(self) -> np.ndarray:
        return gram(self)


def gram(modes: CoherentModes) -> np.ndarray:
    """Pairwise coherent-state overlaps of the mode family.

    ``g[j, k] = exp(-|f_j|^2/2 - |f_k|^2/2 + <f_j, f_k>)`` with the L2
    pairings taken over the full line (grid plus declared tails).
    """
    n = modes.samples.shape[0]
    pair = np.empty((n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            pair[j, k] = modes.pair_integral(j, k)
    norms = np.real(np.diag(pair))
    return np.exp(-0.5 * norms[:, None] - 0.5 * norms[None, :] + pair)


def rjk_weight(modes: CoherentModes, j: int, k: int, t) -> complex:
    """Pair weight ``r_jk(t)`` solving ``r' = -(f_j* f_k - |f_j|^2/2 - |f_k|^2/2) r``
    from ``r(0) = 1``.

    Indices are zero-based.  ``r_jj(t) = 1`` identically; the future Weyl
    overlap equals ``g_jk * r_jk(t)`` under this normalization.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("weight requested at negative time")
    expo = (modes.pair_integral(j, k, t)
            - 0.5 * modes.pair_integral(j, j, t)
            - 0.5 * modes.pair_integral(k, k, t))
    return np.exp(-np.asarray(expo)) if t_arr.ndim else complex(np.exp(-expo))


def restricted_gram(modes: CoherentModes, j: int, k: int, t) -> complex:
    """Overlap of the two coherent components restricted to ``[0, t]``."""
    expo = (modes.pair_integral(j, k, t)
            - 0.5 * np.real(modes.pair_integral(j, j, t))
            - 0.5 * np.real(modes.pair_integral(k, k, t)))
    return np.exp(np.asarray(expo)) if np.asarray(t).ndim else complex(np.exp(expo))


def constant_modes(amplitudes, weights, support: float, grid_dt: float = 1e-3,
                   horizon: float | None = None, normalize_weights: bool = True,
                   check_conditioning: bool = True) -> CoherentModes:
    """Constant-amplitude modes on ``[0, support]``, zero afterwards.

    Overlaps are computed from the exact closed form.  Weights are rescaled
    to satisfy the superposition normalization unless ``normalize_weights``
    is disabled.
    """
    amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if horizon is None:
        horizon = support
    if support > horizon + 1e-12:
        raise GridError("support must lie inside the sampled horizon")
    grid = _time_grid(horizon, grid_dt)
    samples = np.where(grid[None, :] <= support, amplitudes[:, None], 0.0)
    kinds = ("constant",) * len(amplitudes)
    params = tuple({"amplitude": complex(a), "start": 0.0, "stop": float(support)}
                   for a in amplitudes)
    return CoherentModes(grid=grid, samples=samples, weights=weights,
                         kinds=kinds, params=params,
                         check_conditioning=check_conditioning,
                         normalize_weights=normalize_weights)


def modes_from_samples(grid, samples, weights, tail_overlaps=None,
                       normalize_weights: bool = True,
                       check_conditioning: bool = True) -> CoherentModes:
    """Mode family from raw samples on a shared grid.

    Modes with support beyond the grid must declare the pairwise tail
    integrals; otherwise they are taken as compactly supported.
    """
    return CoherentModes(grid=np.asarray(grid, dtype=float),
                         samples=np.atleast_2d(np.asarray(samples, dtype=complex)),
                         weights=weights, tail_overlaps=tail_overlaps,
                         check_conditioning=check_conditioning,
                         normalize_weights=normalize_weights)


@dataclass(frozen=True)
class ExtendedConfig:
    """Superposition weights for the two-level ancilla embedding.

    ``|alpha0|^2 + |alpha1|^2 = 1`` with ``alpha0 != 0``; the derived ratio
    ``nu = alpha1 / alpha0`` parametrizes every embedding coefficient.
    Physical (coupled-equation) results never depend on this choice.
    """

    alpha0: complex = 1.0 / math.sqrt(2.0)
    alpha1: complex = 1.0 / math.sqrt(2.0)

    def __post_init__(self):
        a0 = complex(self.alpha0)
        a1 = complex(self.alpha1)
        if a0 == 0:
            raise EmbeddingError("alpha0 must be non-zero for the embedding")
        if abs(abs(a0) ** 2 + abs(a1) ** 2 - 1.0) > 1e-12:
            raise ModelError("|alpha0|^2 + |alpha1|^2 must equal 1 within 1e-12")
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "alpha1", a1)

    @property
    def nu(self) -> complex:
        return self.alpha1 / self.alpha0

    def w(self, j: int, k: int) -> complex:
        """Weight ``conj(alpha_j) alpha_k`` for component indices in {0, 1}."""
        a = (self.alpha0, self.alpha1)
        return complex(np.conj(a[j]) * a[k])
