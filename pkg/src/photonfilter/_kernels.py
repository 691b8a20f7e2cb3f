"""Vectorized propagation kernels.

States are density-type matrices flattened row-major, so the sandwich map
``rho -> A rho B`` becomes the matrix ``kron(A, B.T)`` acting on the flat
vector and ``tr[rho X]`` becomes the dot product with ``ravel(X.T)``.  All
step functions accept leading batch axes on the state vector, which is how
trajectory ensembles are propagated in parallel.

Everything here implements the adjoint (density) form of the Heisenberg
component equations; the readable matrix forms live in the public modules
and are cross-checked against these kernels by the test suite.
"""

from __future__ import annotations

import numpy as np

from . import operators as ops
from .errors import ConsistencyError, GridError, NumericalBlowup

#: Imaginary parts of innovation drifts above this indicate a corrupted state.
IMAG_TOL = 1e-6


# -- vec machinery ------------------------------------------------------------

def smap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator matrix of ``rho -> a rho b`` in row-major flattening."""
    return np.kron(a, b.T)


def lmul(a: np.ndarray) -> np.ndarray:
    return smap(a, np.eye(a.shape[0], dtype=complex))


def rmul(b: np.ndarray) -> np.ndarray:
    return smap(np.eye(b.shape[0], dtype=complex), b)


def obs_functional(x: np.ndarray) -> np.ndarray:
    """Row vector ``f`` with ``f @ vec(rho) = tr[rho x]``."""
    return np.ravel(np.asarray(x, dtype=complex).T)


def vec(m: np.ndarray) -> np.ndarray:
    return np.reshape(m, m.shape[:-2] + (-1,))


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.reshape(v, v.shape[:-1] + (d, d))


def lindblad_dual_super(L: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Dual generator ``rho -> L rho L† - (1/2){L†L, rho} - i[H, rho]``."""
    Ld = ops.dag(L)
    K = 0.5 * (Ld @ L) + 1j * H
    return smap(L, Ld) - lmul(K) - rmul(ops.dag(K))


# -- shared runner helpers ----------------------------------------------------

def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index`` under ``base_seed``."""
    return np.random.Generator(np.random.Philox(key=[int(base_seed), int(index)]))


def step_count(T: float, dt: float) -> int:
    if dt <= 0:
        raise GridError("dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise GridError(f"horizon {T} is not a positive multiple of dt {dt}")
    return n


def check_step_vs_grid(dt: float, grid_dt: float) -> None:
    if dt > grid_dt * (1.0 + 1e-9):
        raise GridError(
            f"integration step {dt} exceeds the sampling grid step {grid_dt}"
        )


def check_horizon(T: float, horizon: float, tail: float) -> None:
    if T > horizon + 1e-9 and tail > 1e-12:
        raise GridError(
            f"horizon {T} runs past the sampled field (ends at {horizon} "
            f"with residual tail {tail:.2e})"
        )


def output_indices(n_steps: int, n_out: int | None) -> np.ndarray:
    """Step indices (including 0 and n_steps) at which series are stored."""
    if n_out is None or n_out >= n_steps:
        return np.arange(n_steps + 1)
    return np.unique(np.round(np.linspace(0.0, n_steps, n_out + 1)).astype(int))


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalBlowup(f"{what} became non-finite; use a smaller dt")


def _real_drift(vals: np.ndarray, what: str):
    vals = np.asarray(vals)
    if np.max(np.abs(vals.imag)) > IMAG_TOL:
        raise ConsistencyError(
            f"{what} has imaginary part {np.max(np.abs(vals.imag)):.3e}; "
            "the state is corrupted"
        )
    return vals.real


# -- coupled single-photon system ----------------------------------------------

class SpKernel:
    """Drift/diffusion superoperators of the four-component photon system.

    Component order is ``[11, 10, 01, 00]``; the drift matrix decomposes as
    ``M0 + xi M1 + conj(xi) M2 + |xi|^2 M3`` and the diffusion as
    ``D0 + xi D1 + conj(xi) D2``, all precomputed at construction.
    """

    def __init__(self, model):
        d = model.dim
        dd = d * d
        S, L, H = model.S, model.L, model.H
        Sd, Ld = ops.dag(S), ops.dag(L)
        self.d = d
        self.dim_flat = 4 * dd

        lind = lindblad_dual_super(L, H)
        x_ann = smap(S, Ld) - lmul(Ld @ S)      # dual of [L+,  . ]S, carries xi
        x_cre = smap(L, Sd) - rmul(Sd @ L)      # dual of S+[ . , L], carries conj(xi)
        x_gauge = smap(S, Sd) - np.eye(dd)      # dual of S+ . S - ., carries |xi|^2

        def blocks(entries):
            m = np.zeros((4 * dd, 4 * dd), dtype=complex)
            for (r, c), val in entries.items():
                m[r * dd:(r + 1) * dd, c * dd:(c + 1) * dd] = val
            return m

        self.M0 = blocks({(i, i): lind for i in range(4)})
        self.M1 = blocks({(0, 1): x_ann, (2, 3): x_ann})
        self.M2 = blocks({(0, 2): x_cre, (1, 3): x_cre})
        self.M3 = blocks({(0, 3): x_gauge})

        diff = lmul(L) + rmul(Ld)
        self.D0 = blocks({(i, i): diff for i in range(4)})
        self.D1 = blocks({(0, 1): lmul(S), (2, 3): lmul(S)})
        self.D2 = blocks({(0, 2): rmul(Sd), (1, 3): rmul(Sd)})

        def slot(i, f):
            w = np.zeros(4 * dd, dtype=complex)
            w[i * dd:(i + 1) * dd] = f
            return w

        self.w0 = slot(0, obs_functional(L + Ld))
        self.w1 = slot(1, obs_functional(S))
        self.w2 = slot(2, obs_functional(Sd))
        self.tau11 = slot(0, obs_functional(np.eye(d)))

    # construction of states -------------------------------------------------

    def initial_vec(self, eta: np.ndarray) -> np.ndarray:
        rho = ops.projector(eta)
        v = np.zeros(self.dim_flat, dtype=complex)
        dd = self.d * self.d
        v[0:dd] = vec(rho)
        v[3 * dd:4 * dd] = vec(rho)
        return v

    def pack(self, r11, r10, r01, r00) -> np.ndarray:
        return np.concatenate([vec(np.asarray(m, dtype=complex)) for m in (r11, r10, r01, r00)], axis=-1)

    def unpack(self, v: np.ndarray):
        m = np.reshape(v, v.shape[:-1] + (4, self.d, self.d))
        return m[..., 0, :, :], m[..., 1, :, :], m[..., 2, :, :], m[..., 3, :, :]

    # assembled coefficients ---------------------------------------------------

    def drift_matrix(self, xi: complex) -> np.ndarray:
        return self.M0 + xi * self.M1 + np.conj(xi) * self.M2 + abs(xi) ** 2 * self.M3

    def diffusion_matrix(self, xi: complex) -> np.ndarray:
        return self.D0 + xi * self.D1 + np.conj(xi) * self.D2

    def innovation_functional(self, xi: complex) -> np.ndarray:
        return self.w0 + xi * self.w1 + np.conj(xi) * self.w2

    def innovation_drift(self, v: np.ndarray, xi: complex):
        return _real_drift(np.asarray(v @ self.innovation_functional(xi)),
                           "innovation drift")

    # stepping -----------------------------------------------------------------

    def _enforce(self, v: np.ndarray, renormalize: bool):
        """Hermitize the diagonal blocks, restore the conjugate pair, and
        (for filters) rescale by 1/tr[rho11].  Returns (v, pre-fix drift)."""
        m = np.reshape(v, v.shape[:-1] + (4, self.d, self.d))
        tr = np.einsum("...ii->...", m[..., 0, :, :])
        drift = np.max(np.abs(tr - 1.0)) if tr.size else 0.0
        m[..., 0, :, :] = ops.hermitize(m[..., 0, :, :])
        m[..., 3, :, :] = ops.hermitize(m[..., 3, :, :])
        m[..., 2, :, :] = ops.dag(m[..., 1, :, :])
        if renormalize:
            tr = np.real(np.einsum("...ii->...", m[..., 0, :, :]))
            if np.any(tr <= 0):
                raise NumericalBlowup("tr[rho11] lost positivity; use a smaller dt")
            m /= tr[..., None, None, None]
        return np.reshape(m, v.shape), float(drift)

    def euler_filter_step(self, v: np.ndarray, xi: complex, dt: float,
                          dY=None, dW=None):
        """One Euler-Maruyama step of the conditional system.

        ``v`` has shape (..., 4 d^2); exactly one of ``dY`` (replay) or ``dW``
        (self-generated innovations) must be given, the other is derived via
        ``dY = dW + k dt``.  Returns ``(v_next, k, dY, dW, trace_drift)``.
        """
        k = self.innovation_drift(v, xi)
        _require_finite(k, "innovation drift")
        if dW is None:
            dW = np.asarray(dY) - k * dt
        else:
            # Route the drawn innovations through the record exactly as a
            # replay would reconstruct them, so replaying the emitted record
            # reproduces the trajectory bit for bit.
            dY = np.asarray(dW) + k * dt
            dW = dY - k * dt
        drift = v @ self.drift_matrix(xi).T
        diff = v @ self.diffusion_matrix(xi).T - k[..., None] * v
        v2 = v + drift * dt + diff * dW[..., None]
        v2, trace_drift = self._enforce(v2, renormalize=True)
        return v2, k, np.asarray(dY), dW, trace_drift

    def rk4_master_step(self, v: np.ndarray, xi_t: complex, xi_mid: complex,
                        xi_next: complex, dt: float):
        m_a = self.drift_matrix(xi_t)
        m_b = self.drift_matrix(xi_mid)
        m_c = self.drift_matrix(xi_next)
        k1 = v @ m_a.T
        k2 = (v + 0.5 * dt * k1) @ m_b.T
        k3 = (v + 0.5 * dt * k2) @ m_b.T
        k4 = (v + dt * k3) @ m_c.T
        v2 = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return self._enforce(v2, renormalize=False)

    def observable_functionals(self, observables) -> np.ndarray:
        """Matrix mapping the flat state to tr[rho_jk X] for every
        (observable, component) pair; shape (n_obs, 4, 4 d^2)."""
        dd = self.d * self.d
        out = np.zeros((len(observables), 4, self.dim_flat), dtype=complex)
        for i, x in enumerate(observables):
            f = obs_functional(x)
            for p in range(4):
                out[i, p, p * dd:(p + 1) * dd] = f
        return out


# -- extended (ancilla-embedded) systems ----------------------------------------

class ExtendedKernel:
    """Kernels on the ancilla-system embedding of dimension ``n_anc * d``.

    The time-dependent ancilla coupling is ``C(t) = sum_m c_m(t) B_m`` over
    fixed basis matrices ``B_m``; the photon embedding uses the single basis
    ``sigma_plus`` with coefficient ``nu xi(t)``, the superposition embedding
    uses the diagonal projectors with coefficients ``f_j(t)``.
    """

    def __init__(self, model, basis):
        basis = [np.asarray(b, dtype=complex) for b in basis]
        n_anc = basis[0].shape[0]
        d = model.dim
        D = n_anc * d
        S, L, H = model.S, model.L, model.H
        Sd, Ld = ops.dag(S), ops.dag(L)
        I_n = np.eye(n_anc, dtype=complex)
        I_d = np.eye(d, dtype=complex)
        self.n_anc, self.d, self.D = n_anc, d, D
        self.n_basis = len(basis)

        IL = np.kron(I_n, L)
        ILd = ops.dag(IL)
        self.G0 = lindblad_dual_super(IL, np.kron(I_n, H))
        self.G1 = []
        self.G2 = []
        ks = []
        for B in basis:
            KS = np.kron(B, S)
            ks.append(KS)
            self.G1.append(smap(KS, ILd) - lmul(np.kron(B, Ld @ S)))
            self.G2.append(smap(IL, ops.dag(KS)) - rmul(np.kron(ops.dag(B), Sd @ L)))
        self.G3 = [[smap(np.kron(Bp, S), np.kron(ops.dag(B), Sd))
                    - smap(np.kron(Bp, I_d), np.kron(ops.dag(B), I_d))
                    for Bp in basis] for B in basis]

        self.D0 = lmul(IL) + rmul(ILd)
        self.D1 = [lmul(KS) for KS in ks]
        self.D2 = [rmul(ops.dag(KS)) for KS in ks]

        self.h0 = obs_functional(IL + ILd)
        self.h1 = [obs_functional(KS) for KS in ks]
        self.h2 = [obs_functional(ops.dag(KS)) for KS in ks]
        self.q1 = [obs_functional(np.kron(B, I_d)) for B in basis]
        self.q2 = [obs_functional(np.kron(ops.dag(B), I_d)) for B in basis]
        self.tau = obs_functional(np.eye(D, dtype=complex))

    def _coeffs(self, c):
        c = np.atleast_1d(np.asarray(c, dtype=complex))
        if c.shape != (self.n_basis,):
            raise ValueError(f"expected {self.n_basis} coupling coefficients")
        return c

    def drift_matrix(self, c) -> np.ndarray:
        c = self._coeffs(c)
        m = self.G0.copy()
        for i, ci in enumerate(c):
            if ci != 0:
                m += ci * self.G1[i]
                m += np.conj(ci) * self.G2[i]
            for j, cj in enumerate(c):
                w = np.conj(ci) * cj
                if w != 0:
                    m += w * self.G3[i][j]
        return m

    def diffusion_matrix(self, c) -> np.ndarray:
        c = self._coeffs(c)
        m = self.D0.copy()
        for i, ci in enumerate(c):
            if ci != 0:
                m += ci * self.D1[i]
                m += np.conj(ci) * self.D2[i]
        return m

    def innovation_functional(self, c) -> np.ndarray:
        c = self._coeffs(c)
        w = self.h0.copy()
        for i, ci in enumerate(c):
            if ci != 0:
                w += ci * self.h1[i]
                w += np.conj(ci) * self.h2[i]
        return w

    def compensator_functional(self, c) -> np.ndarray:
        c = self._coeffs(c)
        w = np.zeros(self.D * self.D, dtype=complex)
        for i, ci in enumerate(c):
            if ci != 0:
                w += ci * self.q1[i]
                w += np.conj(ci) * self.q2[i]
        return w

    # stepping ------------------------------------------------------------------

    def filter_step(self, v: np.ndarray, c, dY, dt: float):
        """Euler-Maruyama step of the normalized embedded filter."""
        k = _real_drift(np.asarray(v @ self.innovation_functional(c)),
                        "embedded innovation drift")
        _require_finite(k, "embedded innovation drift")
        dW = np.asarray(dY) - k * dt
        diff = v @ self.diffusion_matrix(c).T - k[..., None] * v
        v2 = v + (v @ self.drift_matrix(c).T) * dt + diff * dW[..., None]
        m = ops.hermitize(unvec(v2, self.D))
        tr = np.real(np.einsum("...ii->...", m))
        drift = float(np.max(np.abs(tr - 1.0))) if tr.size else 0.0
        if np.any(tr <= 0):
            raise NumericalBlowup("embedded state trace lost positivity; use a smaller dt")
        m /= tr[..., None, None]
        return vec(m), k, dW, drift

    def zakai_step(self, v: np.ndarray, c, dY, dt: float):
        """Euler-Maruyama step of the unnormalized reference dynamics."""
        kappa = _real_drift(np.asarray(v @ self.compensator_functional(c)),
                            "reference compensator")
        _require_finite(kappa, "reference compensator")
        dYt = np.asarray(dY) - kappa * dt
        diff = v @ self.diffusion_matrix(c).T - kappa[..., None] * v
        v2 = v + (v @ self.drift_matrix(c).T) * dt + diff * dYt[..., None]
        _require_finite(np.asarray(v2 @ self.tau), "reference normalizer")
        return v2, kappa

    def rk4_master_step(self, v: np.ndarray, c_t, c_mid, c_next, dt: float):
        m_a = self.drift_matrix(c_t)
        m_b = self.drift_matrix(c_mid)
        m_c = self.drift_matrix(c_next)
        k1 = v @ m_a.T
        k2 = (v + 0.5 * dt * k1) @ m_b.T
        k3 = (v + 0.5 * dt * k2) @ m_b.T
        k4 = (v + dt * k3) @ m_c.T
        return v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# -- coherent-superposition component system -------------------------------------

class CatKernel:
    """Kernels for the n^2 component functionals of a coherent superposition.

    States are stored as (..., n, n, d^2); pair ``(j, k)`` evolves under a
    generator with coefficients ``conj(f_j(t))`` and ``f_k(t)``, and all pairs
    share one innovation process.
    """

    def __init__(self, model, n: int, weights):
        d = model.dim
        S, L, H = model.S, model.L, model.H
        Sd, Ld = ops.dag(S), ops.dag(L)
        self.n = n
        self.d = d
        self.lind = lindblad_dual_super(L, H)
        self.x_cre = smap(L, Sd) - rmul(Sd @ L)   # coefficient conj(f_j)
        self.x_ann = smap(S, Ld) - lmul(Ld @ S)   # coefficient f_k
        self.x_gauge = smap(S, Sd) - np.eye(d * d)
        self.diff0 = lmul(L) + rmul(Ld)
        self.diff_l = lmul(S)                      # coefficient f_k
        self.diff_r = rmul(Sd)                     # coefficient conj(f_j)
        self.f_ll = obs_functional(L + Ld)
        self.f_s = obs_functional(S)
        self.f_sd = obs_functional(Sd)
        self.f_tr = obs_functional(np.eye(d, dtype=complex))
        w = np.abs(np.asarray(weights, dtype=complex)) ** 2
        self.wbar = w / np.sum(w)

    def initial_tensor(self, eta, gram) -> np.ndarray:
        """Components ``g_jk |eta><eta|`` flattened, shape (n, n, d^2)."""
        rho = vec(ops.projector(eta))
        return np.asarray(gram, dtype=complex)[:, :, None] * rho[None, None, :]

    def drift_tensor(self, f) -> np.ndarray:
        fj = np.conj(np.asarray(f, dtype=complex))[:, None, None, None]
        fk = np.asarray(f, dtype=complex)[None, :, None, None]
        return self.lind + fj * self.x_cre + fk * self.x_ann + (fj * fk) * self.x_gauge

    def diffusion_tensor(self, f) -> np.ndarray:
        fj = np.conj(np.asarray(f, dtype=complex))[:, None, None, None]
        fk = np.asarray(f, dtype=complex)[None, :, None, None]
        return self.diff0 + fk * self.diff_l + fj * self.diff_r

    def innovation_drift(self, v: np.ndarray, f):
        """Weighted diagonal drift ``sum_j wbar_j tr[m_jj (L + L+ + S f_j + S+ f_j*)]``."""
        idx = np.arange(self.n)
        vd = v[..., idx, idx, :]
        f = np.asarray(f, dtype=complex)
        func = (self.f_ll[None, :] + f[:, None] * self.f_s[None, :]
                + np.conj(f)[:, None] * self.f_sd[None, :])
        vals = np.einsum("...ja,ja->...j", vd, func)
        return _real_drift(vals, "superposition innovation drift") @ self.wbar

    def weighted_trace(self, v: np.ndarray):
        idx = np.arange(self.n)
        vd = v[..., idx, idx, :]
        return np.real(np.einsum("...ja,a->...j", vd, self.f_tr)) @ self.wbar

    def _enforce(self, v: np.ndarray, renormalize: bool):
        m = np.reshape(v, v.shape[:-3] + (self.n, self.n, self.d, self.d))
        sym = ops.dag(np.swapaxes(np.swapaxes(m, -4, -3), -1, -2))
        m = 0.5 * (m + sym)
        v2 = np.reshape(m, v.shape)
        tr = self.weighted_trace(v2)
        drift = float(np.max(np.abs(tr - 1.0))) if np.asarray(tr).size else 0.0
        if renormalize:
            if np.any(tr <= 0):
                raise NumericalBlowup("superposition trace lost positivity; use a smaller dt")
            v2 = v2 / np.asarray(tr)[..., None, None, None]
        return v2, drift

    def euler_filter_step(self, v: np.ndarray, f, dt: float, dY=None, dW=None):
        k = np.asarray(self.innovation_drift(v, f))
        _require_finite(k, "superposition innovation drift")
        if dW is None:
            dW = np.asarray(dY) - k * dt
        else:
            # see SpKernel.euler_filter_step: keep replay bit-identical
            dY = np.asarray(dW) + k * dt
            dW = dY - k * dt
        drift = np.einsum("jkab,...jkb->...jka", self.drift_tensor(f), v)
        diff = (np.einsum("jkab,...jkb->...jka", self.diffusion_tensor(f), v)
                - k[..., None, None, None] * v)
        v2 = v + drift * dt + diff * dW[..., None, None, None]
        v2, trace_drift = self._enforce(v2, renormalize=True)
        return v2, k, np.asarray(dY), dW, trace_drift

    def rk4_master_step(self, v: np.ndarray, f_t, f_mid, f_next, dt: float):
        m_a = self.drift_tensor(f_t)
        m_b = self.drift_tensor(f_mid)
        m_c = self.drift_tensor(f_next)

        def apply(mat, x):
            return np.einsum("jkab,...jkb->...jka", mat, x)

        k1 = apply(m_a, v)
        k2 = apply(m_b, v + 0.5 * dt * k1)
        k3 = apply(m_b, v + 0.5 * dt * k2)
        k4 = apply(m_c, v + dt * k3)
        v2 = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        m = np.reshape(v2, v2.shape[:-3] + (self.n, self.n, self.d, self.d))
        sym = ops.dag(np.swapaxes(np.swapaxes(m, -4, -3), -1, -2))
        return np.reshape(0.5 * (m + sym), v2.shape)

    def component_values(self, v: np.ndarray, observables) -> np.ndarray:
        """tr[m_jk X] for each observable; shape (..., n_obs, n, n)."""
        funcs = np.stack([obs_functional(x) for x in observables])
        return np.einsum("...jka,oa->...ojk", v, funcs)

    def combined_values(self, v: np.ndarray, observables, weights) -> np.ndarray:
        """Weighted-ratio expectations; shape (..., n_obs)."""
        comp = self.component_values(v, observables)
        a = np.asarray(weights, dtype=complex)
        wmat = np.conj(a)[:, None] * a[None, :]
        num = np.einsum("jk,...ojk->...o", wmat, comp)
        den = np.einsum("jk,...jka,a->...", wmat, v, self.f_tr)
        return num / den[..., None]
