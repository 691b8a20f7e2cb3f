"""Conditional dynamics for a single-photon driven system under homodyne detection.

The conditional component functionals ``pi_jk(X) = tr[rho_jk X]`` obey four
coupled stochastic equations sharing one innovation process.  Steps use
Euler-Maruyama with the normalization-consistent innovation drift; after
every step the matrices are rescaled by ``1/tr[rho11]`` and the conjugate
pair ``rho01 = rho10^+`` is re-enforced.  An embedded (two-level ancilla)
filter provides an independent formulation used for cross-validation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import operators as ops
from ._kernels import (ExtendedKernel, SpKernel, check_horizon, check_step_vs_grid,
                       obs_functional, output_indices, step_count, trajectory_rng,
                       vec, unvec)
from .errors import ConsistencyError, RecordError
from .master_sp import (SP_PAIRS, _check_pulse_grid, ancilla_unit,
                        initial_extended_matrix)
from .model import ExtendedConfig, Pulse, SystemModel
from .series import ComponentSeries, MeasurementRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpFilterState:
    """Adjoint matrices of the conditional component system at one time.

    ``last_trace_drift`` records ``|tr[rho11] - 1|`` of the most recent raw
    Euler update, before renormalization (a step-health metric).
    """

    rho11: np.ndarray
    rho10: np.ndarray
    rho01: np.ndarray
    rho00: np.ndarray
    t: float = 0.0
    last_trace_drift: float = 0.0


def initial_filter_state(model: SystemModel) -> SpFilterState:
    rho = ops.projector(model.eta)
    zero = np.zeros_like(rho)
    return SpFilterState(rho11=rho, rho10=zero, rho01=zero.copy(), rho00=rho.copy())


def innovation_drift_sp(model: SystemModel, state: SpFilterState, xi_t: complex) -> float:
    """Innovation drift ``k = pi11(L + L+) + pi10(S) xi + pi01(S+) conj(xi)``.

    The value is real up to numerical noise; an imaginary part above 1e-6
    signals a corrupted state and raises :class:`ConsistencyError`.
    """
    xi = complex(xi_t)
    k = (ops.expect(state.rho11, model.L + ops.dag(model.L))
         + xi * ops.expect(state.rho10, model.S)
         + np.conj(xi) * ops.expect(state.rho01, ops.dag(model.S)))
    if abs(k.imag) > 1e-6:
        raise ConsistencyError(
            f"innovation drift has imaginary part {k.imag:.3e}; state is corrupted")
    return float(k.real)


def _raw_increments(model: SystemModel, state: SpFilterState, dY: float,
                    xi_t: complex, dt: float):
    """Un-enforced Euler increments of the four matrices, in readable matrix
    form.  Used as an independent route in tests; propagation itself runs on
    the vectorized kernels."""
    from .master_sp import dual_rhs_sp

    S, L = model.S, model.L
    Sd, Ld = ops.dag(S), ops.dag(L)
    xi = complex(xi_t)
    k = innovation_drift_sp(model, state, xi)
    dW = dY - k * dt
    r11, r10, r01, r00 = state.rho11, state.rho10, state.rho01, state.rho00
    h11 = L @ r11 + r11 @ Ld + np.conj(xi) * (r01 @ Sd) + xi * (S @ r10) - k * r11
    h10 = L @ r10 + r10 @ Ld + np.conj(xi) * (r00 @ Sd) - k * r10
    h01 = L @ r01 + r01 @ Ld + xi * (S @ r00) - k * r01
    h00 = L @ r00 + r00 @ Ld - k * r00
    d11, d10, d01, d00 = dual_rhs_sp(model, state, xi)
    return (d11 * dt + h11 * dW, d10 * dt + h10 * dW,
            d01 * dt + h01 * dW, d00 * dt + h00 * dW, k, dW)


def filter_step_sp(model: SystemModel, state: SpFilterState, dY: float,
                   xi_t: complex, dt: float) -> SpFilterState:
    """One Euler-Maruyama step of the coupled conditional system.

    Consumes the record increment ``dY`` over ``[t, t + dt)``; the innovation
    increment is ``dW = dY - k dt``.  The returned state is renormalized and
    conjugate-enforced.
    """
    kernel = SpKernel(model)
    v = kernel.pack(state.rho11, state.rho10, state.rho01, state.rho00)
    v2, _, _, _, drift = kernel.euler_filter_step(v, complex(xi_t), dt, dY=dY)
    r11, r10, r01, r00 = kernel.unpack(v2)
    return SpFilterState(rho11=r11, rho10=r10, rho01=r01, rho00=r00,
                         t=state.t + dt, last_trace_drift=drift)


# -- embedded (ancilla) filter ---------------------------------------------------

@dataclass(frozen=True)
class ExtendedFilterState:
    """Conditional state of the two-level-ancilla embedding.

    ``varpi`` is the ``2d x 2d`` adjoint matrix with
    ``pi~(A (x) X) = tr[varpi (A (x) X)]``.
    """

    varpi: np.ndarray
    cfg: ExtendedConfig
    t: float = 0.0
    last_trace_drift: float = 0.0


def initial_extended_filter_state(model: SystemModel, cfg: ExtendedConfig) -> ExtendedFilterState:
    return ExtendedFilterState(varpi=initial_extended_matrix(model, cfg), cfg=cfg)


def extended_filter_step(model: SystemModel, state: ExtendedFilterState, dY: float,
                         xi_t: complex, dt: float) -> ExtendedFilterState:
    """One Euler-Maruyama step of the embedded homodyne filter."""
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    c = [state.cfg.nu * complex(xi_t)]
    v2, _, _, drift = kernel.filter_step(vec(state.varpi), c, dY, dt)
    return ExtendedFilterState(varpi=unvec(v2, 2 * model.dim), cfg=state.cfg,
                               t=state.t + dt, last_trace_drift=drift)


def extended_component(state: ExtendedFilterState, j: int, k: int, x: np.ndarray) -> complex:
    """Extract ``pi_jk(X)`` from the embedded conditional state.

    Uses the weight-rescaled block ratio against the photon-photon trace.
    """
    cfg = state.cfg
    d = state.varpi.shape[0] // 2
    num = np.einsum("ab,ba->", state.varpi, np.kron(ancilla_unit(j, k), x))
    den = np.einsum("ab,ba->", state.varpi, np.kron(ancilla_unit(1, 1), np.eye(d)))
    return complex(cfg.w(1, 1) * num / (cfg.w(j, k) * den))


# -- trajectory runners -----------------------------------------------------------

def _component_functionals(labels, mats, kernel: SpKernel) -> np.ndarray:
    return kernel.observable_functionals(mats)


def _draw_innovations(base_seed: int, indices, n_steps: int, dt: float) -> np.ndarray:
    """Innovation increments for each trajectory stream, shape (B, n_steps)."""
    scale = math.sqrt(dt)
    return np.stack([
        trajectory_rng(base_seed, int(i)).normal(0.0, scale, n_steps)
        for i in indices
    ])


def run_filter_batch(model: SystemModel, pulse: Pulse | None, dt: float, T: float,
                     observables, *, base_seed: int | None = None,
                     trajectory_indices=None, dY: np.ndarray | None = None,
                     n_out: int | None = None):
    """Propagate a batch of conditional trajectories on one time grid.

    Either ``base_seed`` with ``trajectory_indices`` (self-generated
    innovations) or a ``dY`` array of shape (B, n_steps) (replay) must be
    supplied.  Returns ``(times, values, dY, dW, health)`` with ``values``
    of shape (B, n_obs, 4, n_times).
    """
    _check_pulse_grid(pulse, dt, T)
    n_steps = step_count(T, dt)
    labels, mats = ops.resolve_observables(observables, model.dim)
    kernel = SpKernel(model)
    phi = kernel.observable_functionals(mats)
    xi_nodes, _ = _xi_nodes_pair(pulse, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)
    pos = {int(s): i for i, s in enumerate(out_idx)}

    if dY is None:
        if base_seed is None or trajectory_indices is None:
            raise ValueError("need base_seed and trajectory_indices to self-generate")
        dw_in = _draw_innovations(base_seed, trajectory_indices, n_steps, dt)
        B = dw_in.shape[0]
    else:
        dY = np.asarray(dY, dtype=float)
        if dY.ndim != 2:
            raise RecordError("replay dY must have shape (batch, n_steps)")
        if dY.shape[1] != n_steps:
            raise RecordError(f"record has {dY.shape[1]} increments, run needs {n_steps}")
        dw_in = None
        B = dY.shape[0]

    v = np.broadcast_to(kernel.initial_vec(model.eta), (B, kernel.dim_flat)).copy()
    values = np.zeros((B, len(labels), 4, len(out_idx)), dtype=complex)
    dY_out = np.zeros((B, n_steps))
    dW_out = np.zeros((B, n_steps))
    if 0 in pos:
        values[..., pos[0]] = np.einsum("opa,Ba->Bop", phi, v)
    worst = 0.0
    for s in range(n_steps):
        if dw_in is not None:
            v, _, dy, dw, drift = kernel.euler_filter_step(v, xi_nodes[s], dt,
                                                           dW=dw_in[:, s])
        else:
            v, _, dy, dw, drift = kernel.euler_filter_step(v, xi_nodes[s], dt,
                                                           dY=dY[:, s])
        dY_out[:, s] = dy
        dW_out[:, s] = dw
        worst = max(worst, drift)
        if (s + 1) in pos:
            values[..., pos[s + 1]] = np.einsum("opa,Ba->Bop", phi, v)
    health = {"max_trace_drift": worst}
    return out_idx * dt, (labels, values), dY_out, dW_out, health


def _xi_nodes_pair(pulse, n_steps, dt):
    from .master_sp import _xi_arrays
    return _xi_arrays(pulse, n_steps, dt)


def simulate_trajectory_sp(model: SystemModel, pulse: Pulse | None, dt: float, T: float,
                           observables, seed: int = 0,
                           record: MeasurementRecord | None = None,
                           n_out: int | None = None):
    """Simulate one conditional trajectory.

    With ``record=None`` the innovations are drawn from the stream keyed by
    ``seed`` and the record is self-generated (``dY = dW + k dt``); otherwise
    the given record is replayed and its innovations reconstructed.  Returns
    ``(record, series)`` with the component series under prefix ``pi``.
    """
    if record is not None:
        if abs(record.dt - dt) > 1e-12 * max(dt, 1.0):
            raise RecordError(f"record dt {record.dt} does not match run dt {dt}")
        n_steps = step_count(T, dt)
        if len(record) != n_steps:
            raise RecordError(f"record length {len(record)} does not match {n_steps} steps")
        times, (labels, values), dY, dW, health = run_filter_batch(
            model, pulse, dt, T, observables, dY=record.dY[None, :], n_out=n_out)
        out_seed = record.seed
    else:
        times, (labels, values), dY, dW, health = run_filter_batch(
            model, pulse, dt, T, observables, base_seed=seed,
            trajectory_indices=[0], n_out=n_out)
        out_seed = seed
    out_record = MeasurementRecord(dt=dt, dY=dY[0], dW=dW[0], seed=out_seed)
    series = ComponentSeries(times=times, labels=labels, pairs=SP_PAIRS,
                             values=values[0], prefix="pi")
    log.debug("trajectory health: %s", health)
    return out_record, series


def simulate_trajectory_extended(model: SystemModel, pulse: Pulse | None,
                                 cfg: ExtendedConfig, dt: float, T: float,
                                 observables, record: MeasurementRecord,
                                 n_out: int | None = None) -> ComponentSeries:
    """Replay a record through the embedded filter and extract ``pi_jk`` series."""
    _check_pulse_grid(pulse, dt, T)
    n_steps = step_count(T, dt)
    if abs(record.dt - dt) > 1e-12 * max(dt, 1.0):
        raise RecordError(f"record dt {record.dt} does not match run dt {dt}")
    if len(record) != n_steps:
        raise RecordError(f"record length {len(record)} does not match {n_steps} steps")
    labels, mats = ops.resolve_observables(observables, model.dim)
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    xi_nodes, _ = _xi_nodes_pair(pulse, n_steps, dt)
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
        values[:, :, i_out] = (nom @ v) / (den_f @ v)

    if 0 in pos:
        store(pos[0])
    for s in range(n_steps):
        v, _, _, _ = kernel.filter_step(v, [cfg.nu * xi_nodes[s]], record.dY[s], dt)
        if (s + 1) in pos:
            store(pos[s + 1])
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=SP_PAIRS,
                           values=values, prefix="pi")
