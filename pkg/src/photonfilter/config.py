"""Run configuration: TOML documents with [system], [field] and [run] sections.

Complex scalars are written as two-element arrays ``[re, im]``, matrices as
nested row arrays.  Parsing validates the whole document and reports every
violation; a canonical emitter produces byte-stable text whose hash is
embedded in run metadata.
"""

from __future__ import annotations

import hashlib
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from . import operators as ops
from .errors import ConfigValidationError, ModelError, ParseError
from .model import (CoherentModes, Pulse, SystemModel, constant_modes,
                    exponential_pulse, gaussian_pulse, modes_from_samples,
                    pulse_from_samples, rising_exponential_pulse, square_pulse)

__version__ = "0.1.0"

_MODES = ("master", "filter", "ensemble", "validate")
_NAMED_SYSTEM = ("identity", "zero", "sigma_x", "sigma_y", "sigma_z",
                 "sigma_plus", "sigma_minus")


def version_string() -> str:
    """Git-describe style version; falls back to the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"photonfilter-{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"photonfilter-{__version__}"


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description.

    ``canonical`` is the normalized nested-dict form of the document (all
    defaults resolved, matrices as [re, im] arrays); two configurations are
    equal exactly when their canonical forms are.
    """

    model: SystemModel
    field_spec: object            # None | Pulse | CoherentModes
    mode: str
    dt: float
    horizon: float
    seed: int
    observables: tuple            # of (label, matrix)
    trajectories: int
    threads: int
    output_points: int | None
    canonical: dict = field(repr=False, default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.canonical == other.canonical

    def observable_request(self):
        return [(lab, m) for lab, m in self.observables]


def _complex_from(value, where: str, problems: list) -> complex:
    if (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(x, (int, float)) for x in value)):
        return complex(float(value[0]), float(value[1]))
    problems.append(f"{where}: expected a two-element [re, im] array, got {value!r}")
    return 0j


def _matrix_from(value, where: str, problems: list, dim: int | None = None):
    if isinstance(value, str):
        name = value
        if name not in _NAMED_SYSTEM:
            problems.append(f"{where}: unknown named matrix {name!r}")
            return None
        d = dim or 2
        if name == "zero":
            return np.zeros((d, d), dtype=complex)
        try:
            return ops.named_matrix(name, d)
        except Exception as exc:
            problems.append(f"{where}: {exc}")
            return None
    if not isinstance(value, list) or not value:
        problems.append(f"{where}: expected a named matrix or nested row arrays")
        return None
    try:
        rows = [[_complex_from(x, where, problems) for x in row] for row in value]
        m = np.array(rows, dtype=complex)
    except (TypeError, ValueError):
        problems.append(f"{where}: malformed matrix")
        return None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        problems.append(f"{where}: matrix must be square, got shape {m.shape}")
        return None
    return m


def _vector_from(value, where: str, problems: list):
    if not isinstance(value, list) or not value:
        problems.append(f"{where}: expected an array of [re, im] entries")
        return None
    return np.array([_complex_from(x, where, problems) for x in value], dtype=complex)


def _get_number(section, key, where, problems, default=None, required=False):
    if key not in section:
        if required:
            problems.append(f"{where}.{key}: missing required value")
        return default
    v = section[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        problems.append(f"{where}.{key}: expected a number, got {v!r}")
        return default
    return float(v)


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate a configuration document from its text."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"configuration is not valid TOML: {exc}") from exc
    return _build_config(doc, base_dir or Path("."))


def parse_config(path) -> RunConfig:
    """Parse and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config_text(text, base_dir=path.parent)


def _build_config(doc: dict, base_dir: Path) -> RunConfig:
    problems: list[str] = []
    for section in doc:
        if section not in ("system", "field", "run"):
            problems.append(f"unknown section [{section}]")
    system = doc.get("system")
    run = doc.get("run")
    fieldsec = doc.get("field", {"type": "vacuum"})
    if not isinstance(system, dict):
        problems.append("missing [system] section")
        system = {}
    if not isinstance(run, dict):
        problems.append("missing [run] section")
        run = {}
    if not isinstance(fieldsec, dict):
        problems.append("[field] must be a section")
        fieldsec = {"type": "vacuum"}

    # ---- [system] ----
    dim = system.get("dim")
    if dim is not None and (not isinstance(dim, int) or dim < 1):
        problems.append("[system].dim: must be a positive integer")
        dim = None
    S = _matrix_from(system.get("S", "identity"), "[system].S", problems, dim)
    L = _matrix_from(system.get("L", "zero"), "[system].L", problems, dim)
    H = _matrix_from(system.get("H", "zero"), "[system].H", problems, dim)
    if dim is None:
        for m in (S, L, H):
            if m is not None:
                dim = m.shape[0]
                break
        else:
            dim = 2
    eta = system.get("eta")
    eta_v = _vector_from(eta, "[system].eta", problems) if eta is not None else None
    if eta_v is None and eta is None:
        problems.append("[system].eta: missing required value")
    model = None
    if not problems:
        try:
            model = SystemModel(S=S, L=L, H=H, eta=eta_v)
        except ModelError as exc:
            for d in (exc.diagnostics or [exc]):
                key = {"NonUnitaryS": "S", "NonHermitianH": "H",
                       "UnnormalizedEta": "eta"}.get(getattr(d, "code", ""), "")
                problems.append(f"[system].{key or '?'}: {d}")

    # ---- [field] ----
    ftype = fieldsec.get("type", "vacuum")
    field_spec = None
    if ftype == "vacuum":
        pass
    elif ftype == "single_photon":
        field_spec = _build_pulse_spec(fieldsec, base_dir, problems)
    elif ftype == "cat":
        field_spec = _build_cat_spec(fieldsec, problems)
    else:
        problems.append(f"[field].type: unknown type {ftype!r}")

    # ---- [run] ----
    mode = run.get("mode", "master")
    if mode not in _MODES:
        problems.append(f"[run].mode: must be one of {_MODES}, got {mode!r}")
    dt = _get_number(run, "dt", "[run]", problems, required=mode != "validate")
    horizon = _get_number(run, "horizon", "[run]", problems,
                          required=mode in ("master", "filter", "ensemble"))
    seed = run.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"[run].seed: must be a non-negative integer, got {seed!r}")
        seed = 0
    trajectories = run.get("trajectories", 2)
    if not isinstance(trajectories, int) or trajectories < 2:
        if mode == "ensemble":
            problems.append("[run].trajectories: ensemble mode needs an integer >= 2")
        trajectories = max(2, int(trajectories) if isinstance(trajectories, int) else 2)
    threads = run.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        problems.append("[run].threads: must be a positive integer")
        threads = 1
    output_points = run.get("output_points")
    if output_points is not None and (not isinstance(output_points, int) or output_points < 1):
        problems.append("[run].output_points: must be a positive integer")
        output_points = None

    observables = []
    raw_obs = run.get("observables", ["n"] if dim == 2 else [])
    if not isinstance(raw_obs, list) or not raw_obs:
        problems.append("[run].observables: a non-empty list is required")
        raw_obs = []
    for i, entry in enumerate(raw_obs):
        where = f"[run].observables[{i}]"
        if isinstance(entry, str):
            try:
                observables.append((entry, ops.named_observable(entry, dim)))
            except Exception as exc:
                problems.append(f"{where}: {exc}")
        elif isinstance(entry, dict) and "name" in entry and "matrix" in entry:
            m = _matrix_from(entry["matrix"], where, problems, dim)
            if m is not None:
                observables.append((str(entry["name"]), m))
        else:
            problems.append(f"{where}: expected a name or a {{name, matrix}} table")

    if dt is not None and dt <= 0:
        problems.append("[run].dt: must be positive")
    if horizon is not None and horizon <= 0:
        problems.append("[run].horizon: must be positive")
    for lab, m in observables:
        if m.shape[0] != dim:
            problems.append(f"[run].observables: {lab!r} has dim {m.shape[0]}, system has {dim}")
    if dt is not None and field_spec is not None and hasattr(field_spec, "grid_dt"):
        if dt > field_spec.grid_dt * (1 + 1e-9):
            problems.append(f"[run].dt: {dt} exceeds the field grid step {field_spec.grid_dt}")

    if problems:
        raise ConfigValidationError(problems)

    cfg = RunConfig(model=model, field_spec=field_spec, mode=mode,
                    dt=float(dt if dt is not None else 1e-3),
                    horizon=float(horizon if horizon is not None else 1.0),
                    seed=seed, observables=tuple(observables),
                    trajectories=trajectories, threads=threads,
                    output_points=output_points)
    object.__setattr__(cfg, "canonical", _canonical_dict(cfg, doc))
    return cfg


def _build_pulse_spec(sec: dict, base_dir: Path, problems: list):
    family = sec.get("pulse", "exponential")
    grid_dt = _get_number(sec, "grid_dt", "[field]", problems, default=1e-3)
    try:
        if family == "exponential":
            return exponential_pulse(gamma=_get_number(sec, "gamma", "[field]", problems, 1.0),
                                     horizon=_get_number(sec, "horizon", "[field]", problems, 40.0),
                                     grid_dt=grid_dt)
        if family == "rising_exponential":
            return rising_exponential_pulse(
                gamma=_get_number(sec, "gamma", "[field]", problems, 1.0),
                support=_get_number(sec, "support", "[field]", problems, required=True) or 1.0,
                grid_dt=grid_dt)
        if family == "gaussian":
            return gaussian_pulse(center=_get_number(sec, "center", "[field]", problems, required=True) or 1.0,
                                  sigma=_get_number(sec, "sigma", "[field]", problems, required=True) or 1.0,
                                  horizon=_get_number(sec, "horizon", "[field]", problems),
                                  grid_dt=grid_dt)
        if family == "square":
            return square_pulse(start=_get_number(sec, "start", "[field]", problems, 0.0),
                                stop=_get_number(sec, "stop", "[field]", problems, required=True) or 1.0,
                                grid_dt=grid_dt)
        if family == "csv":
            path = sec.get("path")
            if not isinstance(path, str):
                problems.append("[field].path: csv pulse needs a file path")
                return None
            data = np.loadtxt(Path(base_dir) / path, delimiter=",", ndmin=2)
            return pulse_from_samples(data[:, 0], data[:, 1] + 1j * data[:, 2],
                                      tail_norm=float(sec.get("tail_norm", 0.0)),
                                      normalize=bool(sec.get("normalize", False)))
        problems.append(f"[field].pulse: unknown family {family!r}")
    except Exception as exc:
        problems.append(f"[field]: cannot build pulse: {exc}")
    return None


def _build_cat_spec(sec: dict, problems: list):
    modes_kind = sec.get("modes", "constant")
    weights = sec.get("weights")
    if not isinstance(weights, list):
        problems.append("[field].weights: a list of [re, im] weights is required")
        return None
    w = _vector_from(weights, "[field].weights", problems)
    grid_dt = _get_number(sec, "grid_dt", "[field]", problems, default=1e-3)
    try:
        if modes_kind == "constant":
            amps = sec.get("amplitudes")
            if not isinstance(amps, list):
                problems.append("[field].amplitudes: required for constant modes")
                return None
            a = _vector_from(amps, "[field].amplitudes", problems)
            support = _get_number(sec, "support", "[field]", problems, required=True) or 1.0
            horizon = _get_number(sec, "horizon", "[field]", problems)
            return constant_modes(a, w, support=support, grid_dt=grid_dt,
                                  horizon=horizon)
        problems.append(f"[field].modes: unknown kind {modes_kind!r}")
    except Exception as exc:
        problems.append(f"[field]: cannot build modes: {exc}")
    return None


# -- canonical emission -------------------------------------------------------------


def _c2(z: complex) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def _mat2(m: np.ndarray) -> list:
    return [[_c2(x) for x in row] for row in np.atleast_2d(m)]


def _canonical_dict(cfg: RunConfig, doc: dict) -> dict:
    sys_c = {"dim": cfg.model.dim, "S": _mat2(cfg.model.S), "L": _mat2(cfg.model.L),
             "H": _mat2(cfg.model.H), "eta": [_c2(x) for x in cfg.model.eta]}
    f = cfg.field_spec
    fieldsec_in = doc.get("field", {})
    if f is None:
        field_c = {"type": "vacuum"}
    elif isinstance(f, Pulse):
        family = fieldsec_in.get("pulse", f.kind)
        if family == "csv":
            field_c = {"type": "single_photon", "pulse": "csv",
                       "path": fieldsec_in.get("path", ""),
                       "tail_norm": float(fieldsec_in.get("tail_norm", 0.0)),
                       "normalize": bool(fieldsec_in.get("normalize", False))}
        else:
            field_c = {"type": "single_photon", "pulse": family,
                       "grid_dt": f.grid_dt, "horizon": f.horizon,
                       "tail_norm": float(f.tail_norm)}
            for key in ("gamma", "support", "center", "sigma", "start", "stop"):
                if key in fieldsec_in:
                    field_c[key] = fieldsec_in[key]
    else:
        field_c = {"type": "cat", "modes": "constant",
                   "amplitudes": [_c2(p["amplitude"]) for p in f.params],
                   "weights": [_c2(x) for x in f.weights],
                   "support": float(f.params[0]["stop"]), "grid_dt": f.grid_dt,
                   "horizon": f.horizon}
    run_c = {"mode": cfg.mode, "dt": cfg.dt, "horizon": cfg.horizon,
             "seed": cfg.seed, "trajectories": cfg.trajectories,
             "threads": cfg.threads,
             "observables": [{"name": lab, "matrix": _mat2(m)}
                             for lab, m in cfg.observables]}
    if cfg.output_points is not None:
        run_c["output_points"] = cfg.output_points
    return {"system": sys_c, "field": field_c, "run": run_c}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v)} as TOML")


def canonical_toml(cfg: RunConfig) -> str:
    """Deterministic TOML emission of the canonical form."""
    out = []
    can = cfg.canonical
    for section in ("system", "field", "run"):
        body = can[section]
        out.append(f"[{section}]")
        for key, val in body.items():
            if key == "observables":
                continue
            out.append(f"{key} = {_toml_value(val)}")
        out.append("")
    for obs in can["run"]["observables"]:
        out.append("[[run.observables]]")
        out.append(f'name = {_toml_value(obs["name"])}')
        out.append(f'matrix = {_toml_value(obs["matrix"])}')
        out.append("")
    return "\n".join(out)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_toml(cfg).encode("utf-8")).hexdigest()
