"""Unnormalized (reference) filter on the two-level-ancilla embedding.

The linear functional ``sigma_t`` evolves without normalization; conditional
expectations are recovered by the ratio ``sigma_t(A (x) X) / sigma_t(I)``.
This gives a third, independent route to the conditional dynamics, used to
cross-validate the coupled and embedded filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import operators as ops
from ._kernels import (ExtendedKernel, obs_functional, output_indices,
                       step_count, vec, unvec)
from .errors import DegenerateLikelihood, RecordError
from .master_sp import (SP_PAIRS, _check_pulse_grid, _xi_arrays, ancilla_unit,
                        initial_extended_matrix)
from .model import ExtendedConfig, Pulse, SystemModel
from .series import ComponentSeries, MeasurementRecord


@dataclass(frozen=True)
class ZakaiState:
    """Unnormalized embedded state ``sigma_t(A (x) X) = tr[varsigma (A (x) X)]``."""

    varsigma: np.ndarray
    cfg: ExtendedConfig
    t: float = 0.0
    kappa: float = 0.0


@dataclass(frozen=True)
class FCoefficients:
    """Drift and quadrature coefficients of the reference propagator."""

    G0: np.ndarray
    G1: np.ndarray


def initial_zakai_state(model: SystemModel, cfg: ExtendedConfig) -> ZakaiState:
    return ZakaiState(varsigma=initial_extended_matrix(model, cfg), cfg=cfg)


def f_coefficients(model: SystemModel, cfg: ExtendedConfig, xi_t: complex) -> FCoefficients:
    """Coefficients of the reference propagator at field value ``xi_t``.

    ``G1`` multiplies the input quadrature increment and reduces to the bare
    coupling ``I (x) L`` whenever the scattering matrix is the identity.
    """
    S, L, H = model.S, model.L, model.H
    Ld = ops.dag(L)
    d = model.dim
    I2 = np.eye(2, dtype=complex)
    I_d = np.eye(d, dtype=complex)
    c = cfg.nu * complex(xi_t)
    g0 = -np.kron(I2, 0.5 * (Ld @ L) + 1j * H) - c * np.kron(ops.SIGMA_PLUS, L + Ld @ S)
    g1 = np.kron(I2, L) + c * np.kron(ops.SIGMA_PLUS, S - I_d)
    return FCoefficients(G0=g0, G1=g1)


def coupling_operator(model: SystemModel, cfg: ExtendedConfig, xi_t: complex) -> np.ndarray:
    """Effective embedded coupling ``I (x) L + nu xi(t) sigma_plus (x) S``."""
    return (np.kron(np.eye(2, dtype=complex), model.L)
            + cfg.nu * complex(xi_t) * np.kron(ops.SIGMA_PLUS, model.S))


def compensator(state: ZakaiState, model: SystemModel, xi_t: complex) -> float:
    """The record compensator ``kappa_t`` computed from the raw state."""
    c = state.cfg.nu * complex(xi_t)
    m = c * np.kron(ops.SIGMA_PLUS, np.eye(model.dim)) \
        + np.conj(c) * np.kron(ops.SIGMA_MINUS, np.eye(model.dim))
    return float(np.real(np.einsum("ab,ba->", state.varsigma, m)))


def zakai_step(model: SystemModel, state: ZakaiState, dY: float, xi_t: complex,
               dt: float) -> ZakaiState:
    """One Euler-Maruyama step of the unnormalized reference dynamics.

    Drift is the embedded generator; the diffusion coefficient acts against
    the compensated increment ``dY - kappa_t dt``.  No renormalization is
    applied, matching the linear structure of the dynamics.
    """
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    c = [state.cfg.nu * complex(xi_t)]
    v2, kappa = kernel.zakai_step(vec(state.varsigma), c, dY, dt)
    return ZakaiState(varsigma=unvec(v2, 2 * model.dim), cfg=state.cfg,
                      t=state.t + dt, kappa=float(kappa))


def normalized_expectation(state: ZakaiState, A: np.ndarray, x: np.ndarray) -> complex:
    """Conditional expectation ``sigma(A (x) X) / sigma(I (x) I)``."""
    den = complex(np.trace(state.varsigma))
    if abs(den) < 1e-300:
        raise DegenerateLikelihood("reference normalizer vanished")
    num = np.einsum("ab,ba->", state.varsigma, np.kron(A, x))
    return complex(num / den)


def zakai_component(state: ZakaiState, j: int, k: int, x: np.ndarray) -> complex:
    """Extract the conditional component ``pi_jk(X)`` from the raw state."""
    cfg = state.cfg
    d = state.varsigma.shape[0] // 2
    num = np.einsum("ab,ba->", state.varsigma, np.kron(ancilla_unit(j, k), x))
    den = np.einsum("ab,ba->", state.varsigma, np.kron(ancilla_unit(1, 1), np.eye(d)))
    if abs(den) < 1e-300:
        raise DegenerateLikelihood("reference normalizer vanished")
    return complex(cfg.w(1, 1) * num / (cfg.w(j, k) * den))


def simulate_zakai(model: SystemModel, pulse: Pulse | None, cfg: ExtendedConfig,
                   dt: float, T: float, observables, record: MeasurementRecord,
                   n_out: int | None = None) -> ComponentSeries:
    """Replay a record through the reference dynamics; emit normalized
    component series under the ``zakai`` prefix."""
    _check_pulse_grid(pulse, dt, T)
    n_steps = step_count(T, dt)
    if abs(record.dt - dt) > 1e-12 * max(dt, 1.0):
        raise RecordError(f"record dt {record.dt} does not match run dt {dt}")
    if len(record) != n_steps:
        raise RecordError(f"record length {len(record)} does not match {n_steps} steps")
    labels, mats = ops.resolve_observables(observables, model.dim)
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    xi_nodes, _ = _xi_arrays(pulse, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)
    pos = {int(s): i for i, s in enumerate(out_idx)}

    nom = np.zeros((len(labels), 4, (2 * model.dim) ** 2), dtype=complex)
    for i, x in enumerate(mats):
        for p, (j, k) in enumerate(SP_PAIRS):
            nom[i, p] = (cfg.w(1, 1) / cfg.w(j, k)) * obs_functional(np.kron(ancilla_unit(j, k), x))
    den_f = obs_functional(np.kron(ancilla_unit(1, 1), np.eye(model.dim, dtype=complex)))

    v = vec(initial_extended_matrix(model, cfg))
    values = np.zeros((len(labels), 4, len(out_idx)), dtype=complex)

    def store(i_out):
        den = den_f @ v
        if abs(den) < 1e-300:
            raise DegenerateLikelihood("reference normalizer vanished")
        values[:, :, i_out] = (nom @ v) / den

    if 0 in pos:
        store(pos[0])
    for s in range(n_steps):
        v, _ = kernel.zakai_step(v, [cfg.nu * xi_nodes[s]], record.dY[s], dt)
        if (s + 1) in pos:
            store(pos[s + 1])
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=SP_PAIRS,
                           values=values, prefix="zakai")
