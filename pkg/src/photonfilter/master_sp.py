"""Unconditional dynamics for a single-photon driven system.

The expectations ``mu_jk(X)`` with photon/vacuum component indices
``jk in {11, 10, 01, 00}`` obey a closed system of four coupled linear
equations; they are propagated here in the adjoint (density) representation
``mu_jk(X) = tr[rho_jk X]`` with a classical fixed-step 4th-order scheme.
An equivalent single equation on the two-level-ancilla embedding is provided
as an internal cross-check of the coupled system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import operators as ops
from ._kernels import (ExtendedKernel, SpKernel, check_horizon, check_step_vs_grid,
                       obs_functional, output_indices, step_count, vec)
from .model import ExtendedConfig, Pulse, SystemModel
from .series import ComponentSeries

log = logging.getLogger(__name__)

#: Component pairs in storage order: photon-photon, photon-vacuum,
#: vacuum-photon, vacuum-vacuum.
SP_PAIRS = ((1, 1), (1, 0), (0, 1), (0, 0))


@dataclass(frozen=True)
class SpMasterState:
    """The four adjoint matrices of the coupled system at one time."""

    rho11: np.ndarray
    rho10: np.ndarray
    rho01: np.ndarray
    rho00: np.ndarray
    t: float = 0.0


def initial_master_state(model: SystemModel) -> SpMasterState:
    """Component matrices at t = 0: diagonal blocks ``|eta><eta|``, zero cross terms."""
    rho = ops.projector(model.eta)
    zero = np.zeros_like(rho)
    return SpMasterState(rho11=rho, rho10=zero, rho01=zero.copy(), rho00=rho.copy(), t=0.0)


def heisenberg_rhs_sp(model: SystemModel, x: np.ndarray, mu11, mu10, mu01, mu00,
                      xi_t: complex):
    """Right-hand sides of the four component equations in Heisenberg form.

    ``mu11 .. mu00`` are the component functionals (callables on operators);
    the caller-supplied functionals are evaluated on the generator images of
    ``x``.  Kept as a readable oracle; propagation uses the adjoint kernels.
    """
    xi = complex(xi_t)
    lx = ops.lindblad(model, x)
    gauge, creation, annihilation = ops.evans_hudson(model, x)
    r11 = (mu11(lx) + mu01(creation) * np.conj(xi) + mu10(annihilation) * xi
           + mu00(gauge) * abs(xi) ** 2)
    r10 = mu10(lx) + mu00(creation) * np.conj(xi)
    r01 = mu01(lx) + mu00(annihilation) * xi
    r00 = mu00(lx)
    return r11, r10, r01, r00


def dual_rhs_sp(model: SystemModel, state: SpMasterState, xi_t: complex):
    """Adjoint right-hand sides: matrices ``drho_jk/dt`` such that
    ``d tr[rho_jk X]/dt`` reproduces :func:`heisenberg_rhs_sp` for every X."""
    S, L, H = model.S, model.L, model.H
    Sd, Ld = ops.dag(S), ops.dag(L)
    LdL = Ld @ L
    LdS = Ld @ S
    SdL = Sd @ L
    xi = complex(xi_t)

    def lind_dual(r):
        return L @ r @ Ld - 0.5 * (LdL @ r + r @ LdL) - 1j * (H @ r - r @ H)

    def from_cross(r):      # adjoint of X -> S+[X, L], coefficient conj(xi)
        return L @ r @ Sd - r @ SdL

    def from_anni(r):       # adjoint of X -> [L+, X]S, coefficient xi
        return S @ r @ Ld - LdS @ r

    r11, r10, r01, r00 = state.rho11, state.rho10, state.rho01, state.rho00
    d11 = (lind_dual(r11) + np.conj(xi) * from_cross(r01) + xi * from_anni(r10)
           + abs(xi) ** 2 * (S @ r00 @ Sd - r00))
    d10 = lind_dual(r10) + np.conj(xi) * from_cross(r00)
    d01 = lind_dual(r01) + xi * from_anni(r00)
    d00 = lind_dual(r00)
    return d11, d10, d01, d00


def _xi_arrays(pulse: Pulse | None, n_steps: int, dt: float):
    """Field samples at the step nodes and midpoints."""
    t = dt * np.arange(n_steps + 1)
    if pulse is None:
        z = np.zeros(n_steps + 1, dtype=complex)
        return z, np.zeros(n_steps, dtype=complex)
    return pulse.value(t), pulse.value(t[:-1] + 0.5 * dt)


def _check_pulse_grid(pulse: Pulse | None, dt: float, T: float) -> None:
    if pulse is None:
        return
    check_step_vs_grid(dt, pulse.grid_dt)
    check_horizon(T, pulse.horizon, pulse.tail_norm)


def propagate_master_sp(model: SystemModel, pulse: Pulse | None, T: float, dt: float,
                        observables, n_out: int | None = None) -> ComponentSeries:
    """Propagate the coupled component system and report ``mu_jk(X)`` series.

    ``pulse=None`` selects the vacuum field, for which the 11 component is
    the ordinary dissipative evolution.  ``dt`` must not exceed the pulse
    grid step and ``T`` must stay inside the sampled pulse support.
    """
    _check_pulse_grid(pulse, dt, T)
    n_steps = step_count(T, dt)
    labels, mats = ops.resolve_observables(observables, model.dim)
    kernel = SpKernel(model)
    phi = kernel.observable_functionals(mats)
    xi_nodes, xi_mid = _xi_arrays(pulse, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)

    v = kernel.initial_vec(model.eta)
    values = np.zeros((len(labels), 4, len(out_idx)), dtype=complex)
    pos = {int(k): i for i, k in enumerate(out_idx)}
    if 0 in pos:
        values[:, :, pos[0]] = phi @ v
    worst = 0.0
    for k in range(n_steps):
        v, drift = kernel.rk4_master_step(v, xi_nodes[k], xi_mid[k], xi_nodes[k + 1], dt)
        worst = max(worst, drift)
        if (k + 1) in pos:
            values[:, :, pos[k + 1]] = phi @ v
    log.debug("master propagation: max pre-symmetrization trace drift %.3e", worst)
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=SP_PAIRS,
                           values=values, prefix="mu")


def ancilla_unit(j: int, k: int) -> np.ndarray:
    """Ancilla matrix unit ``|e_j><e_k|`` in the (photon, vacuum) basis."""
    m = np.zeros((2, 2), dtype=complex)
    m[1 - j, 1 - k] = 1.0
    return m


def extended_generator_sp(model: SystemModel, A: np.ndarray, x: np.ndarray,
                          xi_t: complex, cfg: ExtendedConfig) -> np.ndarray:
    """Generator of the embedded unconditional dynamics applied to ``A (x) X``.

    Setting ``A`` to an ancilla matrix unit recovers the coupled component
    equations up to the embedding weights.
    """
    A = ops.as_operator(A, "ancilla operator")
    c = cfg.nu * complex(xi_t)
    lx = ops.lindblad(model, x)
    gauge, creation, annihilation = ops.evans_hudson(model, x)
    return (np.kron(A, lx)
            + c * np.kron(A @ ops.SIGMA_PLUS, annihilation)
            + np.conj(c) * np.kron(ops.SIGMA_MINUS @ A, creation)
            + abs(c) ** 2 * np.kron(ops.SIGMA_MINUS @ A @ ops.SIGMA_PLUS, gauge))


def initial_extended_matrix(model: SystemModel, cfg: ExtendedConfig) -> np.ndarray:
    """Adjoint matrix of the embedded state at t = 0 (block-diagonal)."""
    w = np.diag([abs(cfg.alpha1) ** 2, abs(cfg.alpha0) ** 2]).astype(complex)
    return np.kron(w, ops.projector(model.eta))


def propagate_master_extended(model: SystemModel, pulse: Pulse | None,
                              cfg: ExtendedConfig, T: float, dt: float,
                              observables, n_out: int | None = None) -> ComponentSeries:
    """Propagate the embedded master equation and extract ``mu_jk`` series.

    Serves as an internal cross-check: results must match
    :func:`propagate_master_sp` for every admissible weight choice.
    """
    _check_pulse_grid(pulse, dt, T)
    n_steps = step_count(T, dt)
    labels, mats = ops.resolve_observables(observables, model.dim)
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    xi_nodes, xi_mid = _xi_arrays(pulse, n_steps, dt)
    nu = cfg.nu
    out_idx = output_indices(n_steps, n_out)

    # mu_jk(X) = tr[w (E_jk (x) X)] / w_jk
    funcs = np.zeros((len(labels), 4, (2 * model.dim) ** 2), dtype=complex)
    for i, x in enumerate(mats):
        for p, (j, k) in enumerate(SP_PAIRS):
            funcs[i, p] = obs_functional(np.kron(ancilla_unit(j, k), x)) / cfg.w(j, k)

    v = vec(initial_extended_matrix(model, cfg))
    values = np.zeros((len(labels), 4, len(out_idx)), dtype=complex)
    pos = {int(k): i for i, k in enumerate(out_idx)}
    if 0 in pos:
        values[:, :, pos[0]] = funcs @ v
    for k in range(n_steps):
        v = kernel.rk4_master_step(v, [nu * xi_nodes[k]], [nu * xi_mid[k]],
                                   [nu * xi_nodes[k + 1]], dt)
        if (k + 1) in pos:
            values[:, :, pos[k + 1]] = funcs @ v
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=SP_PAIRS,
                           values=values, prefix="mu")
