"""Dense complex operator algebra on small Hilbert spaces.

Operators are plain ``complex128`` ndarrays.  All functions accept stacked
inputs (leading batch axes) wherever that is meaningful; the last two axes
are always the matrix axes.  Everything here is pure and allocation-only,
so values can be shared freely between threads.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

#: Default tolerance for hermiticity / unitarity checks (max-entry norm).
DEFAULT_ATOL = 1e-10


def as_operator(a, name: str = "operator") -> np.ndarray:
    """Coerce ``a`` to a square complex matrix, raising on bad shape."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(float))):
        raise DimensionError(f"{name} contains non-finite entries")
    return m


def dag(a: np.ndarray) -> np.ndarray:
    """Hermitian adjoint, batched over leading axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def trace(a: np.ndarray):
    """Matrix trace over the last two axes."""
    return np.einsum("...ii->...", a)


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``ab - ba``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_same_dim(a, b)
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``ab + ba``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_same_dim(a, b)
    return a @ b + b @ a


def expect(rho: np.ndarray, x: np.ndarray) -> complex:
    """Expectation functional ``tr[rho x]``."""
    rho = np.asarray(rho, dtype=complex)
    x = np.asarray(x, dtype=complex)
    _check_same_dim(rho, x)
    return complex(np.einsum("ij,ji->", rho, x))


def lindblad(model, x: np.ndarray) -> np.ndarray:
    """Heisenberg-picture dissipative generator for a coupled system.

    Computes ``L† x L - (1/2){L†L, x} - i[x, H]``, which equals the
    symmetrized form ``(1/2)L†[x, L] + (1/2)[L†, x]L - i[x, H]``.

    Parameters
    ----------
    model : object with attributes ``L`` and ``H``
        Coupling operator and Hamiltonian.
    x : ndarray
        System observable, same dimension as the model.
    """
    x = np.asarray(x, dtype=complex)
    L, H = model.L, model.H
    _check_same_dim(x, L)
    Ld = dag(L)
    LdL = Ld @ L
    return Ld @ x @ L - 0.5 * (LdL @ x + x @ LdL) - 1j * (x @ H - H @ x)


def evans_hudson(model, x: np.ndarray):
    """The gauge, creation and annihilation coefficient maps.

    Returns the triple ``(S†xS - x, S†[x, L], [L†, x]S)`` that multiplies
    the gauge, creation and annihilation increments of the quantum Ito
    evolution of ``x``.
    """
    x = np.asarray(x, dtype=complex)
    S, L = model.S, model.L
    _check_same_dim(x, S)
    Sd, Ld = dag(S), dag(L)
    gauge = Sd @ x @ S - x
    creation = Sd @ (x @ L - L @ x)
    annihilation = (Ld @ x - x @ Ld) @ S
    return gauge, creation, annihilation


def kron(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Kronecker product; block ``(j, k)`` of the result is ``a[j, k] * x``."""
    a = as_operator(a, "ancilla factor")
    x = as_operator(x, "system factor")
    return np.kron(a, x)


def block(m: np.ndarray, n: int, d: int, j: int, k: int) -> np.ndarray:
    """Extract the ``(j, k)`` block of an ``(n*d, n*d)`` composite operator."""
    m = np.asarray(m)
    if m.shape[-2:] != (n * d, n * d):
        raise DimensionError(f"expected shape (..., {n * d}, {n * d}), got {m.shape}")
    return m.reshape(m.shape[:-2] + (n, d, n, d))[..., j, :, k, :]


def identity(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex)


def basis_state(d: int, i: int) -> np.ndarray:
    """Standard basis ket as a length-``d`` complex vector."""
    v = np.zeros(d, dtype=complex)
    v[i] = 1.0
    return v


def projector(psi: np.ndarray) -> np.ndarray:
    """Rank-one density matrix ``|psi><psi|``."""
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, np.conj(psi))


# Two-level matrices, basis ordered (excited, ground): sigma_minus lowers
# the excited state, so the excitation projector is diag(1, 0).
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
NUMBER = SIGMA_PLUS @ SIGMA_MINUS

_NAMED_QUBIT = {
    "sx": SIGMA_X,
    "sy": SIGMA_Y,
    "sz": SIGMA_Z,
    "sp": SIGMA_PLUS,
    "sm": SIGMA_MINUS,
    "n": NUMBER,
}

_NAMED_MATRICES = dict(
    _NAMED_QUBIT,
    identity=None,  # resolved per dimension
    sigma_x=SIGMA_X,
    sigma_y=SIGMA_Y,
    sigma_z=SIGMA_Z,
    sigma_plus=SIGMA_PLUS,
    sigma_minus=SIGMA_MINUS,
)


def named_observable(name: str, dim: int) -> np.ndarray:
    """Resolve a named observable ("n", "sx", ..., "id") for dimension ``dim``."""
    if name in ("id", "identity"):
        return identity(dim)
    try:
        m = _NAMED_MATRICES[name]
    except KeyError:
        raise ValueError(f"unknown observable name {name!r}") from None
    if m is None:
        return identity(dim)
    if dim != 2:
        raise DimensionError(f"named observable {name!r} is two-level, model has dim {dim}")
    return m.copy()


def named_matrix(name: str, dim: int) -> np.ndarray:
    """Resolve a named system matrix for use in configuration files."""
    return named_observable(name, dim)


def resolve_observables(observables, dim: int):
    """Normalize an observable request into ``(labels, matrices)``.

    Accepts a mapping ``{label: matrix-or-name}``, an iterable of names,
    or an iterable of ``(label, matrix)`` pairs.
    """
    labels: list[str] = []
    mats: list[np.ndarray] = []
    items = observables.items() if isinstance(observables, dict) else observables
    for item in items:
        if isinstance(item, str):
            label, spec = item, item
        else:
            label, spec = item
        m = named_observable(spec, dim) if isinstance(spec, str) else as_operator(spec, label)
        if m.shape[0] != dim:
            raise DimensionError(f"observable {label!r} has dim {m.shape[0]}, model has {dim}")
        labels.append(str(label))
        mats.append(m)
    if not labels:
        raise ValueError("at least one observable is required")
    return tuple(labels), mats


def max_entry(a: np.ndarray) -> float:
    a = np.asarray(a)
    return 0.0 if a.size == 0 else float(np.max(np.abs(a)))


def is_hermitian(a: np.ndarray, atol: float = DEFAULT_ATOL) -> bool:
    return max_entry(a - dag(a)) <= atol


def is_unitary(a: np.ndarray, atol: float = DEFAULT_ATOL) -> bool:
    d = a.shape[-1]
    return max_entry(dag(a) @ a - identity(d)) <= atol


def hermitize(a: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, batched."""
    return 0.5 * (a + dag(a))
