"""Monte-Carlo trajectory ensembles and innovations statistics.

Trajectories are propagated in vectorized chunks; every trajectory draws its
innovations from a counter-based stream keyed by ``(base_seed, index)``, and
chunk results are reduced in fixed index order, so reports are bit-identical
for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cat import cat_pairs, propagate_cat_master, run_cat_filter_batch
from .errors import PhotonFilterError
from .filter_sp import run_filter_batch
from .master_sp import SP_PAIRS, propagate_master_sp
from .model import CoherentModes, Pulse, SystemModel
from .series import MeasurementRecord, _fmt

#: Standard errors below this floor are treated as exactly deterministic.
_SE_FLOOR = 1e-14


@dataclass(frozen=True)
class EnsembleReport:
    """Ensemble means of conditional functionals against the unconditional values.

    ``z_re``/``z_im`` are ``(mean - master) / stderr`` per part, with z = 0
    where both the deviation and the standard error vanish (deterministic
    points such as t = 0).
    """

    times: np.ndarray
    labels: tuple
    pairs: tuple
    prefix: str
    mean: np.ndarray          # complex, (n_obs, n_pairs, n_times)
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    master: np.ndarray        # complex, matched unconditional values
    z_re: np.ndarray
    z_im: np.ndarray
    n_traj: int
    base_seed: int
    dt: float

    def z_scores(self, label: str, j: int, k: int, part: str = "re") -> np.ndarray:
        i = self.labels.index(label)
        p = self.pairs.index((j, k))
        return (self.z_re if part == "re" else self.z_im)[i, p]

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["time"]
        for lab in self.labels:
            for (j, k) in self.pairs:
                stem = f"{self.prefix}_{j}{k}_{lab}"
                cols += [f"{stem}_mean_re", f"{stem}_mean_im",
                         f"{stem}_stderr_re", f"{stem}_stderr_im",
                         f"{stem}_master_re", f"{stem}_master_im",
                         f"{stem}_z_re", f"{stem}_z_im"]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for it, t in enumerate(self.times):
                row = [_fmt(t)]
                for i in range(len(self.labels)):
                    for p in range(len(self.pairs)):
                        row += [_fmt(self.mean[i, p, it].real), _fmt(self.mean[i, p, it].imag),
                                _fmt(self.stderr_re[i, p, it]), _fmt(self.stderr_im[i, p, it]),
                                _fmt(self.master[i, p, it].real), _fmt(self.master[i, p, it].imag),
                                _fmt(self.z_re[i, p, it]), _fmt(self.z_im[i, p, it])]
                fh.write(",".join(row) + "\n")
        return path

    def metadata(self) -> dict:
        return {"n_traj": self.n_traj, "base_seed": self.base_seed, "dt": self.dt,
                "n_times": len(self.times)}


def _z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    out = np.zeros_like(diff)
    live = se > _SE_FLOOR
    out[live] = diff[live] / se[live]
    dead = ~live & (np.abs(diff) > 1e-10)
    out[dead] = np.inf
    return out


def run_ensemble(model: SystemModel, field, *, dt: float, T: float, n_traj: int,
                 base_seed: int, observables, n_out: int | None = 100,
                 threads: int = 1, chunk_size: int = 256,
                 keep_records: bool = False):
    """Run ``n_traj`` conditional trajectories and compare ensemble means with
    the matched unconditional solution.

    ``field`` is ``None`` (vacuum), a :class:`Pulse`, or
    :class:`CoherentModes`.  Returns an :class:`EnsembleReport`, or
    ``(report, records)`` when ``keep_records`` is set.
    """
    if n_traj < 2:
        raise ValueError("an ensemble needs at least 2 trajectories")
    if isinstance(field, CoherentModes):
        pairs = cat_pairs(field.n)
        master = propagate_cat_master(model, field, dt, T, observables, n_out=n_out)

        def run_chunk(idx):
            times, (labels, values, _combined), dY, dW, _ = run_cat_filter_batch(
                model, field, dt, T, observables, base_seed=base_seed,
                trajectory_indices=idx, n_out=n_out)
            return times, labels, values, dY, dW
    else:
        pairs = SP_PAIRS
        master = propagate_master_sp(model, field, T, dt, observables, n_out=n_out)

        def run_chunk(idx):
            times, (labels, values), dY, dW, _ = run_filter_batch(
                model, field, dt, T, observables, base_seed=base_seed,
                trajectory_indices=idx, n_out=n_out)
            return times, labels, values, dY, dW

    chunks = [range(lo, min(lo + chunk_size, n_traj))
              for lo in range(0, n_traj, chunk_size)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    times, labels = results[0][0], results[0][1]
    shape = results[0][2].shape[1:]
    total = np.zeros(shape, dtype=complex)
    total_re2 = np.zeros(shape)
    total_im2 = np.zeros(shape)
    records = []
    for (_, _, values, dY, dW), idx in zip(results, chunks):
        total += values.sum(axis=0)
        total_re2 += (values.real ** 2).sum(axis=0)
        total_im2 += (values.imag ** 2).sum(axis=0)
        if keep_records:
            records += [MeasurementRecord(dt=dt, dY=dY[i], dW=dW[i], seed=base_seed)
                        for i in range(values.shape[0])]

    mean = total / n_traj
    var_re = np.maximum(total_re2 / n_traj - mean.real ** 2, 0.0) * n_traj / (n_traj - 1)
    var_im = np.maximum(total_im2 / n_traj - mean.imag ** 2, 0.0) * n_traj / (n_traj - 1)
    se_re = np.sqrt(var_re / n_traj)
    se_im = np.sqrt(var_im / n_traj)
    z_re = _z(mean.real - master.values.real, se_re)
    z_im = _z(mean.imag - master.values.imag, se_im)
    report = EnsembleReport(times=times, labels=labels, pairs=pairs, prefix="pi",
                            mean=mean, stderr_re=se_re, stderr_im=se_im,
                            master=master.values, z_re=z_re, z_im=z_im,
                            n_traj=n_traj, base_seed=base_seed, dt=dt)
    return (report, records) if keep_records else report


@dataclass(frozen=True)
class InnovationsStats:
    """Per-record innovation statistics with Wiener plausibility flags.

    ``qvar_rate`` is the quadratic variation per unit time (1 for a Wiener
    process), ``terminal`` the end value W(T), ``lag1`` the lag-one
    autocorrelation of the increments.  ``wiener_ok`` flags records whose
    quadratic variation sits inside the three-sigma band and whose variance
    is non-degenerate.
    """

    dt: float
    horizon: float
    increment_mean: np.ndarray
    qvar_rate: np.ndarray
    lag1: np.ndarray
    terminal: np.ndarray
    wiener_ok: np.ndarray
    qvar_band: float

    @property
    def n_records(self) -> int:
        return len(self.qvar_rate)

    def terminal_mean(self) -> float:
        return float(np.mean(self.terminal))


def innovations_stats(records) -> InnovationsStats:
    """Summarize the innovation increments of one or more records."""
    records = list(records)
    if not records:
        raise ValueError("at least one record is required")
    dt = records[0].dt
    n = len(records[0])
    for r in records:
        if r.dW is None:
            raise PhotonFilterError("record has no innovation increments")
        if abs(r.dt - dt) > 1e-12 or len(r) != n:
            raise PhotonFilterError("records must share one time grid")
    T = dt * n
    dW = np.stack([r.dW for r in records])
    inc_mean = dW.mean(axis=1)
    qvar = (dW ** 2).sum(axis=1) / T
    centered = dW - inc_mean[:, None]
    var = (centered ** 2).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lag1 = np.where(var > 0,
                        (centered[:, :-1] * centered[:, 1:]).mean(axis=1) / var,
                        0.0)
    band = 3.0 * math.sqrt(2.0 * dt / T)
    ok = (var > 0) & (np.abs(qvar - 1.0) <= band)
    return InnovationsStats(dt=dt, horizon=T, increment_mean=inc_mean,
                            qvar_rate=qvar, lag1=lag1,
                            terminal=dW.sum(axis=1), wiener_ok=ok,
                            qvar_band=band)
