"""Cross-formulation validation suite.

Each check exercises an identity that ties two independently implemented
routes together (coupled vs embedded vs reference dynamics, adjoint vs
Heisenberg forms, conditional vs unconditional averages).  The CLI
``validate`` mode runs all checks at desk scale and reports a table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import operators as ops
from .cat import (cat_filter_step, initial_cat_state, propagate_cat_master,
                  simulate_trajectory_cat)
from .ensemble import innovations_stats, run_ensemble
from .filter_sp import (initial_filter_state, filter_step_sp, _raw_increments,
                        simulate_trajectory_sp, simulate_trajectory_extended)
from .master_sp import (dual_rhs_sp, heisenberg_rhs_sp, initial_master_state,
                        propagate_master_extended, propagate_master_sp)
from .model import (CoherentModes, ExtendedConfig, Pulse, SystemModel,
                    constant_modes, exponential_pulse)
from .zakai_ref import coupling_operator, initial_zakai_state, simulate_zakai, zakai_step

#: Fixed stream used by the deterministic validation runs.
VALIDATION_SEED = 13


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.detail}"


def benchmark_qubit_model() -> SystemModel:
    """Decaying two-level system, ground start: the standard benchmark."""
    return SystemModel(S=np.eye(2), L=ops.SIGMA_MINUS, H=np.zeros((2, 2)), eta=[0.0, 1.0])


def benchmark_pulse(grid_dt: float = 1e-3, horizon: float = 10.0) -> Pulse:
    """Matched decaying-exponential wavepacket for the benchmark qubit."""
    return exponential_pulse(gamma=1.0, horizon=horizon, grid_dt=grid_dt)


def random_bounded_model(rng: np.random.Generator, dim: int) -> SystemModel:
    """Random model with unitary S, bounded L, Hermitian H, unit eta."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    S, _ = np.linalg.qr(z)
    L = 0.7 * (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    H = 0.5 * (h + h.conj().T)
    eta = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    eta /= np.linalg.norm(eta)
    return SystemModel(S=S, L=L, H=H, eta=eta)


def random_density(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = z @ z.conj().T
    return rho / np.trace(rho)


def random_matrix(rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))


# -- individual checks ------------------------------------------------------------


def check_duality(seed: int = VALIDATION_SEED) -> CheckResult:
    """Adjoint component equations against the Heisenberg form, random inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(25):
        dim = int(rng.integers(2, 4))
        m = random_bounded_model(rng, dim)
        states = [random_density(rng, dim) for _ in range(4)]
        from .master_sp import SpMasterState
        st = SpMasterState(rho11=states[0], rho10=states[1],
                           rho01=states[2], rho00=states[3])
        xi = complex(rng.normal(), rng.normal())
        duals = dual_rhs_sp(m, st, xi)
        for _ in range(4):
            x = random_matrix(rng, dim)
            mus = [lambda op, r=r: ops.expect(r, op) for r in states]
            heis = heisenberg_rhs_sp(m, x, *mus, xi)
            for dmat, h in zip(duals, heis):
                worst = max(worst, abs(ops.expect(dmat, x) - h))
    return CheckResult("duality adjoint/Heisenberg", worst <= 1e-10,
                       f"max residual {worst:.2e} (tol 1e-10)")


def check_master_conservation(seed: int = VALIDATION_SEED) -> CheckResult:
    """Trace and conjugate-symmetry conservation over random short runs."""
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for _ in range(5):
        dim = int(rng.integers(2, 5))
        m = random_bounded_model(rng, dim)
        pulse = exponential_pulse(gamma=1.0, horizon=2.0, grid_dt=1e-2)
        ser = propagate_master_sp(m, pulse, T=2.0, dt=1e-2, observables=[("id", np.eye(dim))])
        worst = max(worst, float(np.max(np.abs(ser.value("id", 1, 1) - 1.0))))
        worst = max(worst, float(np.max(np.abs(ser.value("id", 0, 0) - 1.0))))
    return CheckResult("master trace conservation", worst <= 1e-8,
                       f"max |mu_jj(I) - 1| = {worst:.2e} (tol 1e-8)")


def check_master_embedding(seed: int = VALIDATION_SEED) -> CheckResult:
    """Coupled component equations against the embedded single equation."""
    rng = np.random.default_rng(seed + 2)
    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=1e-2, horizon=6.0)
    worst = 0.0
    for _ in range(3):
        a0 = float(rng.uniform(0.2, 0.95))
        cfg = ExtendedConfig(alpha0=a0, alpha1=math.sqrt(1.0 - a0 * a0))
        a = propagate_master_sp(model, pulse, T=5.0, dt=1e-2, observables=["n", "sp"])
        b = propagate_master_extended(model, pulse, cfg, T=5.0, dt=1e-2,
                                      observables=["n", "sp"])
        worst = max(worst, float(np.max(np.abs(a.values - b.values))))
    return CheckResult("embedded/coupled master equivalence", worst <= 1e-8,
                       f"max component difference {worst:.2e} (tol 1e-8)")


def check_vacuum_reduction(seed: int = VALIDATION_SEED) -> CheckResult:
    """Photon filter with a null pulse against a bare homodyne filter."""
    rng = np.random.default_rng(seed + 3)
    model = SystemModel(S=np.eye(2), L=ops.SIGMA_MINUS, H=np.zeros((2, 2)),
                        eta=[1.0, 0.0])
    dt = 1e-3
    state = initial_filter_state(model)
    rho = ops.projector(model.eta)
    L, Ld = model.L, ops.dag(model.L)
    LdL = Ld @ L
    worst = 0.0
    for _ in range(400):
        dW = rng.normal(0.0, math.sqrt(dt))
        k = float(np.real(np.trace(rho @ (L + Ld))))
        dY = dW + k * dt
        state = filter_step_sp(model, state, dY, 0.0, dt)
        drift = L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
        diff = L @ rho + rho @ Ld - k * rho
        rho = rho + drift * dt + diff * (dY - k * dt)
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.real(np.trace(rho))
        worst = max(worst, float(np.max(np.abs(state.rho11 - rho))))
        worst = max(worst, float(np.max(np.abs(state.rho10))))
    return CheckResult("vacuum reduction of the photon filter", worst <= 1e-10,
                       f"max per-step deviation {worst:.2e} (tol 1e-10)")


def check_three_way(dts=(1e-2, 5e-3, 2.5e-3), seed: int = VALIDATION_SEED,
                    T: float = 4.0) -> CheckResult:
    """Coupled vs embedded vs reference conditional trajectories, shared record."""
    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=max(dts), horizon=10.0)
    cfg = ExtendedConfig()
    fine = min(dts)
    rec, _ = simulate_trajectory_sp(model, pulse, dt=fine, T=T, observables=["n"],
                                    seed=seed)
    diffs = []
    for dt in sorted(dts):
        factor = int(round(dt / fine))
        r = rec.coarsen(factor)
        _, cser = simulate_trajectory_sp(model, pulse, dt=dt, T=T,
                                         observables=["n"], record=r)
        eser = simulate_trajectory_extended(model, pulse, cfg, dt=dt, T=T,
                                            observables=["n"], record=r)
        zser = simulate_zakai(model, pulse, cfg, dt=dt, T=T,
                              observables=["n"], record=r)
        a = cser.value("n", 1, 1).real
        b = eser.value("n", 1, 1).real
        c = zser.value("n", 1, 1).real
        diffs.append(max(np.max(np.abs(a - b)), np.max(np.abs(a - c)),
                         np.max(np.abs(b - c))))
    ok = all(d <= 5.0 * dt for d, dt in zip(diffs, sorted(dts)))
    detail = ", ".join(f"dt={dt:g}: {d:.4f} (bound {5 * dt:.4f})"
                       for dt, d in zip(sorted(dts), diffs))
    return CheckResult("three-way filter equivalence", ok, detail)


def check_alpha_invariance(seed: int = VALIDATION_SEED) -> CheckResult:
    """Embedded-filter extraction is weight-independent and matches the
    coupled filter."""
    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=1e-2, horizon=10.0)
    dt, T = 2.5e-3, 4.0
    rec, cser = simulate_trajectory_sp(model, pulse, dt=dt, T=T,
                                       observables=["n"], seed=seed)
    rec_b, cser_b = simulate_trajectory_sp(model, pulse, dt=dt, T=T,
                                           observables=["n"], seed=seed)
    if not np.array_equal(cser.values, cser_b.values):
        return CheckResult("weight invariance", False, "coupled rerun differs")
    a = cser.value("n", 1, 1).real
    worst = 0.0
    for a0 in (0.3, 1.0 / math.sqrt(2.0), 0.9):
        cfg = ExtendedConfig(alpha0=a0, alpha1=math.sqrt(1.0 - a0 * a0))
        es = simulate_trajectory_extended(model, pulse, cfg, dt=dt, T=T,
                                          observables=["n"], record=rec)
        worst = max(worst, float(np.max(np.abs(a - es.value("n", 1, 1).real))))
    return CheckResult("weight invariance", worst <= 5 * dt,
                       f"max extraction difference {worst:.4f} (bound {5 * dt})")


def check_innovations(seed: int = VALIDATION_SEED) -> CheckResult:
    """Wiener statistics of self-generated innovation records."""
    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=1e-2, horizon=10.0)
    records = [simulate_trajectory_sp(model, pulse, dt=1e-2, T=8.0,
                                      observables=["n"], seed=seed + i)[0]
               for i in range(20)]
    stats = innovations_stats(records)
    ok = bool(np.all(stats.wiener_ok))
    worst = float(np.max(np.abs(stats.qvar_rate - 1.0)))
    return CheckResult("innovations Wiener statistics", ok,
                       f"max |qvar - 1| = {worst:.3f} (band {stats.qvar_band:.3f})")


def check_martingale(seed: int = VALIDATION_SEED) -> CheckResult:
    """Ensemble mean of the conditional values against the unconditional run."""
    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=2e-3, horizon=8.0)
    report = run_ensemble(model, pulse, dt=2e-3, T=4.0, n_traj=400,
                          base_seed=seed, observables=["n"], n_out=50)
    z = report.z_scores("n", 1, 1, "re")
    frac = float(np.mean(np.abs(z[report.times > 0]) <= 3.0))
    return CheckResult("conditional-mean identity", frac >= 0.9,
                       f"{100 * frac:.0f}% of times within 3 sigma")


def check_cat_master(seed: int = VALIDATION_SEED) -> CheckResult:
    """Component traces stay at the overlap matrix; single-component case
    matches the displaced-picture dissipative evolution."""
    model = benchmark_qubit_model()
    worst = 0.0
    families = {2: ([0.4, -0.3 + 0.2j], [1.0, 0.8 - 0.3j]),
                3: ([0.5, -0.4, 0.25j], [1.0, -0.6, 0.4j])}
    for n in (2, 3):
        amps, w = families[n]
        modes = constant_modes(amps, w, support=3.0, grid_dt=1e-2)
        ser = propagate_cat_master(model, modes, dt=1e-2, T=3.0,
                                   observables=[("id", np.eye(2))])
        for p, (j, k) in enumerate(ser.pairs):
            target = modes.gram[j, k]
            worst = max(worst, float(np.max(np.abs(ser.values[0, p] - target))))
    # displaced-picture oracle, single component
    beta = 0.5
    modes1 = constant_modes([beta], [1.0], support=6.0, grid_dt=1e-2)
    ser1 = propagate_cat_master(model, modes1, dt=1e-2, T=6.0, observables=["n"])
    from .master_sp import propagate_master_sp as _pm
    disp = _displaced_model(model, beta)
    vac = _pm(disp, None, T=6.0, dt=1e-2, observables=["n"])
    worst2 = float(np.max(np.abs(ser1.combined_value("n") - vac.value("n", 1, 1))))
    ok = worst <= 1e-8 and worst2 <= 1e-8
    return CheckResult("superposition master identities", ok,
                       f"trace residual {worst:.2e}, displaced-oracle residual {worst2:.2e}")


def _displaced_model(model: SystemModel, f: complex) -> SystemModel:
    """Vacuum-picture model equivalent to driving with a constant coherent
    amplitude: L -> L + S f, H -> H - (i/2)(f L+ S - f* S+ L)."""
    S, L, H = model.S, model.L, model.H
    L2 = L + S * f if np.isscalar(f) else L + S @ f
    H2 = H - 0.5j * (f * (ops.dag(L) @ S) - np.conj(f) * (ops.dag(S) @ L))
    return SystemModel(S=S, L=L2, H=H2, eta=model.eta)


def check_cat_filter_oracle(seed: int = VALIDATION_SEED) -> CheckResult:
    """Single-component conditional trajectory against the displaced filter."""
    model = benchmark_qubit_model()
    beta = 0.5
    dt, T = 1e-3, 4.0
    modes1 = constant_modes([beta], [1.0], support=T, grid_dt=dt)
    rec, ser = simulate_trajectory_cat(model, modes1, dt=dt, T=T,
                                       observables=["n"], seed=seed)
    disp = _displaced_model(model, beta)
    _, dser = simulate_trajectory_sp(disp, None, dt=dt, T=T, observables=["n"],
                                     record=rec)
    worst = float(np.max(np.abs(ser.combined_value("n").real
                                - dser.value("n", 1, 1).real)))
    return CheckResult("superposition filter displaced oracle", worst <= 5 * dt,
                       f"sup difference {worst:.5f} (bound {5 * dt})")


def check_zakai_identity(seed: int = VALIDATION_SEED) -> CheckResult:
    """Reference identity ``lambda(I)/sigma(I) = pi~(Ltilde + adj) - kappa``.

    The left side is evaluated through the vectorized kernels (trace of the
    diffusion-dual increment), the right side from direct matrix expressions,
    so the check ties the two code routes together at every step.
    """
    from ._kernels import ExtendedKernel, vec
    from .zakai_ref import compensator

    model = benchmark_qubit_model()
    pulse = benchmark_pulse(grid_dt=1e-2, horizon=10.0)
    cfg = ExtendedConfig()
    dt = 1e-2
    rec, _ = simulate_trajectory_sp(model, pulse, dt=dt, T=2.0,
                                    observables=["n"], seed=seed)
    kernel = ExtendedKernel(model, [ops.SIGMA_PLUS])
    state = initial_zakai_state(model, cfg)
    worst = 0.0
    for s in range(len(rec)):
        xi = complex(pulse.value(s * dt))
        c = [cfg.nu * xi]
        v = vec(state.varsigma)
        kappa_k = float(np.real(v @ kernel.compensator_functional(c)))
        lam_I = float(np.real((v @ kernel.diffusion_matrix(c).T) @ kernel.tau
                              - kappa_k * (v @ kernel.tau)))
        sig_I = float(np.real(v @ kernel.tau))
        lhs = lam_I / sig_I
        Lt = coupling_operator(model, cfg, xi)
        pi_m = float(np.real(np.einsum("ab,ba->", state.varsigma, Lt + ops.dag(Lt)))
                     / np.real(np.trace(state.varsigma)))
        rhs = pi_m - compensator(state, model, xi)
        worst = max(worst, abs(lhs - rhs))
        state = zakai_step(model, state, rec.dY[s], xi, dt)
    return CheckResult("reference normalizer identity", worst <= 1e-9,
                       f"max residual {worst:.2e} (tol 1e-9)")


ALL_CHECKS = (
    check_duality,
    check_master_conservation,
    check_master_embedding,
    check_vacuum_reduction,
    check_three_way,
    check_alpha_invariance,
    check_innovations,
    check_martingale,
    check_cat_master,
    check_cat_filter_oracle,
    check_zakai_identity,
)


def run_validation_suite(seed: int = VALIDATION_SEED) -> list[CheckResult]:
    """Run every cross-formulation check; returns one result per check."""
    results = []
    for check in ALL_CHECKS:
        try:
            results.append(check(seed=seed))
        except Exception as exc:  # a crashed check is a failed check
            results.append(CheckResult(check.__name__, False, f"raised {exc!r}"))
    return results
