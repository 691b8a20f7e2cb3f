"""Output containers: component time series and measurement records.

CSV emission uses the shortest round-trip representation of each double so
that re-running a configuration reproduces files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RecordError


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class ComponentSeries:
    """Time series of component functionals ``tr[rho_jk X]`` per observable.

    ``values[i, p, k]`` is the value of observable ``labels[i]`` on component
    pair ``pairs[p]`` at ``times[k]``.  ``combined`` optionally holds the
    weighted-ratio physical expectation (used for coherent superpositions).
    ``prefix`` names the functional family in CSV headers ("mu", "pi", ...).
    """

    times: np.ndarray
    labels: tuple
    pairs: tuple
    values: np.ndarray
    prefix: str = "mu"
    combined: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        if self.values.shape != (len(self.labels), len(self.pairs), len(self.times)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.labels)}, {len(self.pairs)}, {len(self.times)})"
            )
        if self.combined is not None:
            c = np.asarray(self.combined, dtype=complex)
            if c.shape != (len(self.labels), len(self.times)):
                raise ValueError("combined shape must be (n_labels, n_times)")
            object.__setattr__(self, "combined", c)

    def value(self, label: str, j: int, k: int) -> np.ndarray:
        """Series for one observable and component pair."""
        i = self.labels.index(label)
        p = self.pairs.index((j, k))
        return self.values[i, p]

    def combined_value(self, label: str) -> np.ndarray:
        if self.combined is None:
            raise ValueError("series has no combined (ratio) values")
        return self.combined[self.labels.index(label)]

    def column_names(self) -> list[str]:
        cols = []
        for i, lab in enumerate(self.labels):
            for (j, k) in self.pairs:
                stem = f"{self.prefix}_{j}{k}_{lab}"
                cols += [f"{stem}_re", f"{stem}_im"]
        if self.combined is not None:
            for lab in self.labels:
                cols += [f"combined_{lab}_re", f"combined_{lab}_im"]
        return cols

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["time"] + self.column_names()) + "\n")
            for k, t in enumerate(self.times):
                row = [_fmt(t)]
                for i in range(len(self.labels)):
                    for p in range(len(self.pairs)):
                        v = self.values[i, p, k]
                        row += [_fmt(v.real), _fmt(v.imag)]
                if self.combined is not None:
                    for i in range(len(self.labels)):
                        v = self.combined[i, k]
                        row += [_fmt(v.real), _fmt(v.imag)]
                fh.write(",".join(row) + "\n")
        return path


@dataclass(frozen=True)
class MeasurementRecord:
    """Fixed-step homodyne record: increments ``dY`` and, when the record was
    self-generated (or reconstructed by replay), the innovations ``dW``.

    The same seed always reproduces the same increments bit for bit.
    """

    dt: float
    dY: np.ndarray
    dW: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        dY = np.asarray(self.dY, dtype=float)
        if dY.ndim != 1:
            raise RecordError("dY must be a 1-D array of increments")
        object.__setattr__(self, "dY", dY)
        if self.dW is not None:
            dW = np.asarray(self.dW, dtype=float)
            if dW.shape != dY.shape:
                raise RecordError("dW and dY lengths differ")
            object.__setattr__(self, "dW", dW)

    def __len__(self) -> int:
        return len(self.dY)

    @property
    def horizon(self) -> float:
        return self.dt * len(self.dY)

    def times(self) -> np.ndarray:
        """Left endpoints of the increment intervals."""
        return self.dt * np.arange(len(self.dY))

    def coarsen(self, factor: int) -> "MeasurementRecord":
        """Aggregate consecutive increments into steps of ``factor * dt``."""
        if factor < 1 or len(self.dY) % factor != 0:
            raise RecordError(f"record length {len(self.dY)} not divisible by {factor}")
        dY = self.dY.reshape(-1, factor).sum(axis=1)
        dW = None if self.dW is None else self.dW.reshape(-1, factor).sum(axis=1)
        return MeasurementRecord(dt=self.dt * factor, dY=dY, dW=dW, seed=self.seed)

    def to_csv(self, path, metadata_path=None) -> Path:
        """Write ``k,t,dY[,dW]`` rows plus a sidecar metadata JSON."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("k,t,dY,dW\n" if self.dW is not None else "k,t,dY\n")
            for k in range(len(self.dY)):
                row = [str(k), _fmt(k * self.dt), _fmt(self.dY[k])]
                if self.dW is not None:
                    row.append(_fmt(self.dW[k]))
                fh.write(",".join(row) + "\n")
        meta = Path(metadata_path) if metadata_path else path.with_suffix(".meta.json")
        meta.write_text(json.dumps(
            {"dt": self.dt, "length": len(self.dY), "seed": self.seed},
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path, metadata_path=None) -> "MeasurementRecord":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                header = fh.readline().strip().split(",")
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise RecordError(f"cannot read record {path}: {exc}") from exc
        if header[:3] != ["k", "t", "dY"]:
            raise RecordError(f"unexpected record header {header!r}")
        if data.shape[0] == 0:
            raise RecordError("record is empty")
        seed = None
        dt = None
        meta = Path(metadata_path) if metadata_path else path.with_suffix(".meta.json")
        if meta.exists():
            info = json.loads(meta.read_text(encoding="utf-8"))
            seed = info.get("seed")
            dt = info.get("dt")
        if dt is None:
            if data.shape[0] < 2:
                raise RecordError("cannot infer dt from a single-row record without metadata")
            dt = float(data[1, 1] - data[0, 1])
        dW = data[:, 3] if len(header) > 3 else None
        return cls(dt=float(dt), dY=data[:, 2], dW=dW, seed=seed)
