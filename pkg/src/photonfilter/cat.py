"""Dynamics for a field in a superposition of coherent states.

The component functionals ``mu_jk`` / ``pi_jk`` (one per ordered pair of
superposition components, indices zero-based in code) evolve independently
in drift but share one innovation process; physical expectations are the
weighted ratios over the component matrix.  An n-level ancilla embedding
provides the independent cross-check formulation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import operators as ops
from ._kernels import (CatKernel, ExtendedKernel, check_horizon, check_step_vs_grid,
                       obs_functional, output_indices, step_count, vec, unvec)
from .errors import RecordError
from .model import CoherentModes, SystemModel, rjk_weight  # noqa: F401  (re-export)
from .series import ComponentSeries, MeasurementRecord

log = logging.getLogger(__name__)


def cat_pairs(n: int) -> tuple:
    return tuple((j, k) for j in range(n) for k in range(n))


@dataclass(frozen=True)
class CatState:
    """Component matrices ``m_jk`` (shape (n, n, d, d)) at one time."""

    components: np.ndarray
    t: float = 0.0
    last_trace_drift: float = 0.0

    @property
    def n(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class CatExtendedState:
    """Adjoint matrix of the n-level ancilla embedding at one time."""

    varpi: np.ndarray
    t: float = 0.0
    last_trace_drift: float = 0.0


def initial_cat_state(model: SystemModel, modes: CoherentModes) -> CatState:
    """Components ``g_jk |eta><eta|`` at t = 0."""
    rho = ops.projector(model.eta)
    comps = modes.gram[:, :, None, None] * rho[None, None, :, :]
    return CatState(components=comps)


def initial_cat_extended_state(model: SystemModel, modes: CoherentModes) -> CatExtendedState:
    """Embedded state with block ``(k, j)`` equal to
    ``conj(a_j) a_k g_jk |eta><eta| / |a|^2`` (its trace is 1)."""
    a = modes.weights
    g = modes.gram
    b = (a[:, None] * np.conj(a)[None, :]) * np.conj(g) / np.sum(np.abs(a) ** 2)
    return CatExtendedState(varpi=np.kron(b, ops.projector(model.eta)))


def cat_generator(model: SystemModel, x: np.ndarray, fj_t: complex, fk_t: complex) -> np.ndarray:
    """Heisenberg generator of the ``(j, k)`` component at mode values
    ``f_j(t)``, ``f_k(t)``."""
    lx = ops.lindblad(model, x)
    gauge, creation, annihilation = ops.evans_hudson(model, x)
    fj = complex(fj_t)
    fk = complex(fk_t)
    return lx + np.conj(fj) * creation + fk * annihilation + np.conj(fj) * fk * gauge


def _check_mode_grid(modes: CoherentModes, dt: float, T: float) -> None:
    check_step_vs_grid(dt, modes.grid_dt)
    if modes.tail_overlaps is not None:
        tail = float(np.max(np.abs(modes.tail_overlaps)))
        check_horizon(T, modes.horizon, tail)


def _mode_arrays(modes: CoherentModes, n_steps: int, dt: float):
    t = dt * np.arange(n_steps + 1)
    return modes.values(t), modes.values(t[:-1] + 0.5 * dt)


def propagate_cat_master(model: SystemModel, modes: CoherentModes, dt: float, T: float,
                         observables, n_out: int | None = None) -> ComponentSeries:
    """Propagate all component equations (4th-order fixed step) and report
    ``mu_jk(X)`` plus the combined weighted-ratio expectation."""
    _check_mode_grid(modes, dt, T)
    n_steps = step_count(T, dt)
    labels, mats = ops.resolve_observables(observables, model.dim)
    n = modes.n
    kernel = CatKernel(model, n, modes.weights)
    f_nodes, f_mid = _mode_arrays(modes, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)
    pos = {int(s): i for i, s in enumerate(out_idx)}

    v = kernel.initial_tensor(model.eta, modes.gram)
    values = np.zeros((len(labels), n * n, len(out_idx)), dtype=complex)
    combined = np.zeros((len(labels), len(out_idx)), dtype=complex)

    def store(i_out):
        comp = kernel.component_values(v, mats)
        values[:, :, i_out] = comp.reshape(len(labels), n * n)
        combined[:, i_out] = kernel.combined_values(v, mats, modes.weights)

    if 0 in pos:
        store(pos[0])
    for s in range(n_steps):
        v = kernel.rk4_master_step(v, f_nodes[:, s], f_mid[:, s], f_nodes[:, s + 1], dt)
        if (s + 1) in pos:
            store(pos[s + 1])
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=cat_pairs(n),
                           values=values, prefix="mu", combined=combined)


def cat_filter_step(model: SystemModel, modes: CoherentModes, state: CatState,
                    dY: float, t: float, dt: float) -> CatState:
    """One Euler-Maruyama step of the component filter system.

    All pairs share the innovation ``dW = dY - k dt`` with the weighted
    diagonal drift ``k``; afterwards the conjugate pair symmetry is
    re-enforced and the weighted diagonal trace is rescaled to 1.
    """
    kernel = CatKernel(model, modes.n, modes.weights)
    v = vec(state.components)
    f = modes.values(t)
    v2, _, _, _, drift = kernel.euler_filter_step(v, f, dt, dY=dY)
    return CatState(components=unvec(v2, model.dim), t=state.t + dt,
                    last_trace_drift=drift)


def cat_innovation_drift(model: SystemModel, modes: CoherentModes, state: CatState,
                         t: float) -> float:
    """Weighted diagonal innovation drift of the component filter."""
    kernel = CatKernel(model, modes.n, modes.weights)
    return float(np.asarray(kernel.innovation_drift(vec(state.components), modes.values(t))))


def _diag_projectors(n: int):
    return [np.diag((np.arange(n) == j).astype(complex)) for j in range(n)]


def cat_extended_step(model: SystemModel, modes: CoherentModes, state: CatExtendedState,
                      dY: float, t: float, dt: float) -> CatExtendedState:
    """One Euler-Maruyama step of the n-level embedded filter."""
    kernel = ExtendedKernel(model, _diag_projectors(modes.n))
    v2, _, _, drift = kernel.filter_step(vec(state.varpi), modes.values(t), dY, dt)
    return CatExtendedState(varpi=unvec(v2, modes.n * model.dim), t=state.t + dt,
                            last_trace_drift=drift)


def cat_extended_component(modes: CoherentModes, state: CatExtendedState,
                           j: int, k: int, x: np.ndarray) -> complex:
    """Extract ``pi_jk(X)`` from the embedded state via the weight rescaling."""
    a = modes.weights
    n, d = modes.n, state.varpi.shape[0] // modes.n
    unit = np.zeros((n, n), dtype=complex)
    unit[j, k] = 1.0
    val = np.einsum("ab,ba->", state.varpi, np.kron(unit, x))
    return complex(np.sum(np.abs(a) ** 2) / (np.conj(a[j]) * a[k]) * val)


def run_cat_filter_batch(model: SystemModel, modes: CoherentModes, dt: float, T: float,
                         observables, *, base_seed: int | None = None,
                         trajectory_indices=None, dY: np.ndarray | None = None,
                         n_out: int | None = None):
    """Batched component-filter trajectories; see
    :func:`photonfilter.filter_sp.run_filter_batch` for the contract."""
    from .filter_sp import _draw_innovations

    _check_mode_grid(modes, dt, T)
    n_steps = step_count(T, dt)
    labels, mats = ops.resolve_observables(observables, model.dim)
    n = modes.n
    kernel = CatKernel(model, n, modes.weights)
    f_nodes, _ = _mode_arrays(modes, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)
    pos = {int(s): i for i, s in enumerate(out_idx)}

    if dY is None:
        if base_seed is None or trajectory_indices is None:
            raise ValueError("need base_seed and trajectory_indices to self-generate")
        dw_in = _draw_innovations(base_seed, trajectory_indices, n_steps, dt)
        B = dw_in.shape[0]
    else:
        dY = np.asarray(dY, dtype=float)
        if dY.ndim != 2 or dY.shape[1] != n_steps:
            raise RecordError(f"replay dY must have shape (batch, {n_steps})")
        dw_in = None
        B = dY.shape[0]

    v = np.broadcast_to(kernel.initial_tensor(model.eta, modes.gram),
                        (B, n, n, model.dim ** 2)).copy()
    values = np.zeros((B, len(labels), n * n, len(out_idx)), dtype=complex)
    combined = np.zeros((B, len(labels), len(out_idx)), dtype=complex)
    dY_out = np.zeros((B, n_steps))
    dW_out = np.zeros((B, n_steps))

    def store(i_out):
        comp = kernel.component_values(v, mats)
        values[..., i_out] = comp.reshape(B, len(labels), n * n)
        combined[..., i_out] = kernel.combined_values(v, mats, modes.weights)

    if 0 in pos:
        store(pos[0])
    worst = 0.0
    for s in range(n_steps):
        if dw_in is not None:
            v, _, dy, dw, drift = kernel.euler_filter_step(v, f_nodes[:, s], dt,
                                                           dW=dw_in[:, s])
        else:
            v, _, dy, dw, drift = kernel.euler_filter_step(v, f_nodes[:, s], dt,
                                                           dY=dY[:, s])
        dY_out[:, s] = dy
        dW_out[:, s] = dw
        worst = max(worst, drift)
        if (s + 1) in pos:
            store(pos[s + 1])
    health = {"max_trace_drift": worst}
    return out_idx * dt, (labels, values, combined), dY_out, dW_out, health


def simulate_trajectory_cat(model: SystemModel, modes: CoherentModes, dt: float, T: float,
                            observables, seed: int = 0,
                            record: MeasurementRecord | None = None,
                            n_out: int | None = None):
    """One conditional trajectory for the superposition field.

    Self-generates innovations from ``seed`` unless a record is replayed.
    Returns ``(record, series)``; the series carries per-pair values plus the
    combined ratio expectation.
    """
    n_steps = step_count(T, dt)
    if record is not None:
        if abs(record.dt - dt) > 1e-12 * max(dt, 1.0):
            raise RecordError(f"record dt {record.dt} does not match run dt {dt}")
        if len(record) != n_steps:
            raise RecordError(f"record length {len(record)} does not match {n_steps} steps")
        times, (labels, values, combined), dY, dW, health = run_cat_filter_batch(
            model, modes, dt, T, observables, dY=record.dY[None, :], n_out=n_out)
        out_seed = record.seed
    else:
        times, (labels, values, combined), dY, dW, health = run_cat_filter_batch(
            model, modes, dt, T, observables, base_seed=seed,
            trajectory_indices=[0], n_out=n_out)
        out_seed = seed
    out_record = MeasurementRecord(dt=dt, dY=dY[0], dW=dW[0], seed=out_seed)
    series = ComponentSeries(times=times, labels=labels, pairs=cat_pairs(modes.n),
                             values=values[0], prefix="pi", combined=combined[0])
    log.debug("superposition trajectory health: %s", health)
    return out_record, series


def simulate_trajectory_cat_extended(model: SystemModel, modes: CoherentModes,
                                     dt: float, T: float, observables,
                                     record: MeasurementRecord,
                                     n_out: int | None = None) -> ComponentSeries:
    """Replay a record through the n-level embedded filter; extract components."""
    _check_mode_grid(modes, dt, T)
    n_steps = step_count(T, dt)
    if len(record) != n_steps or abs(record.dt - dt) > 1e-12 * max(dt, 1.0):
        raise RecordError("record is incompatible with the requested replay")
    labels, mats = ops.resolve_observables(observables, model.dim)
    n, d = modes.n, model.dim
    kernel = ExtendedKernel(model, _diag_projectors(n))
    f_nodes, _ = _mode_arrays(modes, n_steps, dt)
    out_idx = output_indices(n_steps, n_out)
    pos = {int(s): i for i, s in enumerate(out_idx)}

    a = modes.weights
    asq = np.sum(np.abs(a) ** 2)

    def component_functional(j, k, x):
        unit = np.zeros((n, n), dtype=complex)
        unit[j, k] = 1.0
        return (asq / (np.conj(a[j]) * a[k])) * obs_functional(np.kron(unit, x))

    funcs = np.zeros((len(labels), n * n, (n * d) ** 2), dtype=complex)
    funcs_tr = np.zeros((n * n, (n * d) ** 2), dtype=complex)
    for p, (j, k) in enumerate(cat_pairs(n)):
        for i, x in enumerate(mats):
            funcs[i, p] = component_functional(j, k, x)
        funcs_tr[p] = component_functional(j, k, np.eye(d, dtype=complex))

    v = vec(initial_cat_extended_state(model, modes).varpi)
    values = np.zeros((len(labels), n * n, len(out_idx)), dtype=complex)
    traces = np.zeros((n * n, len(out_idx)), dtype=complex)

    def store(i_out):
        values[:, :, i_out] = funcs @ v
        traces[:, i_out] = funcs_tr @ v

    if 0 in pos:
        store(pos[0])
    for s in range(n_steps):
        v, _, _, _ = kernel.filter_step(v, f_nodes[:, s], record.dY[s], dt)
        if (s + 1) in pos:
            store(pos[s + 1])
    wflat = (np.conj(a)[:, None] * a[None, :]).reshape(-1)
    combined = np.einsum("p,opt->ot", wflat, values) / np.einsum("p,pt->t", wflat, traces)
    return ComponentSeries(times=out_idx * dt, labels=labels, pairs=cat_pairs(n),
                           values=values, prefix="pi", combined=combined)
