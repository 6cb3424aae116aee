"""Dense complex linear algebra on qubit registers.

Everything here works on plain ``numpy`` complex128 arrays laid out row-major,
with qubit 0 as the most significant (leftmost) tensor factor. The
``DensityMatrix`` and ``SpectralState`` containers validate on construction;
the kernels at the bottom (``apply_unitary``, ``apply_superoperator``) are the
hot loops used by the circuit simulator and skip validation.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidStateError, QubitCapError

MAX_QUBITS = 13
ATOL = 1e-10


class DegenerateSpectrumWarning(UserWarning):
    """Largest eigenvalue of a state is (numerically) degenerate."""


def check_qubit_cap(num_qubits: int) -> None:
    if num_qubits > MAX_QUBITS:
        raise QubitCapError(
            f"{num_qubits} qubits requested; dense simulation is capped at {MAX_QUBITS} "
            f"(a {MAX_QUBITS}-qubit density matrix already needs ~1 GB)"
        )


def num_qubits_of(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def as_array(x) -> np.ndarray:
    """Underlying complex array of a matrix-like object."""
    return np.asarray(getattr(x, "matrix", x), dtype=complex)


def kron(a, b) -> np.ndarray:
    """Kronecker product; entry (i1*rb + i2, j1*cb + j2) is a[i1, j1] * b[i2, j2]."""
    return np.kron(as_array(a), as_array(b))


def kron_all(mats: Iterable) -> np.ndarray:
    return reduce(np.kron, (as_array(m) for m in mats), np.ones((1, 1), dtype=complex))


def ket_to_dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite state on ``num_qubits`` qubits."""

    matrix: np.ndarray
    num_qubits: int = field(init=False)

    def __init__(self, matrix, validate: bool = True):
        m = np.array(as_array(matrix), dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidStateError(f"density matrix must be square, got shape {m.shape}")
        n = num_qubits_of(m.shape[0])
        check_qubit_cap(n)
        if validate:
            _validate_density(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "num_qubits", n)

    @classmethod
    def unchecked(cls, matrix) -> DensityMatrix:
        """Wrap without validation (hot loops); the caller vouches for validity."""
        return cls(matrix, validate=False)

    @classmethod
    def from_ket(cls, psi) -> DensityMatrix:
        return cls(ket_to_dm(psi))

    @classmethod
    def zero(cls, num_qubits: int) -> DensityMatrix:
        m = np.zeros((1 << num_qubits, 1 << num_qubits), dtype=complex)
        m[0, 0] = 1
        return cls.unchecked(m)

    @classmethod
    def maximally_mixed(cls, num_qubits: int) -> DensityMatrix:
        d = 1 << num_qubits
        return cls.unchecked(np.eye(d, dtype=complex) / d)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.matrix, self.matrix)))

    def expectation(self, op) -> float:
        return float(np.real(np.einsum("ij,ji->", as_array(op), self.matrix)))

    def validate(self) -> DensityMatrix:
        _validate_density(self.matrix)
        return self

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _validate_density(m: np.ndarray, atol: float = ATOL) -> None:
    herm = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if herm > atol:
        raise InvalidStateError(f"matrix is not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(m)
    if abs(tr - 1) > atol:
        raise InvalidStateError(f"trace is {tr:.12g}, expected 1")
    lam_min = np.linalg.eigvalsh((m + m.conj().T) / 2)[0]
    if lam_min < -atol:
        raise InvalidStateError(f"matrix has negative eigenvalue {lam_min:.3e}")


def partial_trace(rho, keep: Iterable[int]) -> DensityMatrix:
    """Reduce ``rho`` onto the qubits in ``keep`` (returned in ascending order)."""
    m = as_array(rho)
    n = num_qubits_of(m.shape[0])
    keep = sorted(set(int(q) for q in keep))
    if any(q < 0 or q >= n for q in keep):
        raise IndexError(f"keep indices {keep} out of range for {n} qubits")
    if len(keep) == n:
        return DensityMatrix.unchecked(m)
    letters = string.ascii_letters
    rows = list(letters[:n])
    cols = [rows[q] if q not in keep else letters[n + q] for q in range(n)]
    out = [rows[q] for q in keep] + [letters[n + q] for q in keep]
    spec = "".join(rows) + "".join(cols) + "->" + "".join(out)
    reduced = np.einsum(spec, m.reshape((2,) * (2 * n)))
    d = 1 << len(keep)
    return DensityMatrix.unchecked(reduced.reshape(d, d))


def haar_random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix with phase fix."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def haar_random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return g / np.linalg.norm(g)


def random_density_matrix(num_qubits: int, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Random mixed state from the induced (Ginibre) measure."""
    d = 1 << num_qubits
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m))


@dataclass(frozen=True, eq=False)
class SpectralState:
    """State written as (1 - epsilon)|psi><psi| + epsilon * sum_k w_k |psi_k><psi_k|."""

    epsilon: float
    dominant: np.ndarray
    noise_components: tuple[tuple[float, np.ndarray], ...] = ()

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise InvalidStateError("epsilon must lie in [0, 1)")
        vecs = [self.dominant] + [v for _, v in self.noise_components]
        gram = np.array([[np.vdot(a, b) for b in vecs] for a in vecs])
        if np.max(np.abs(gram - np.eye(len(vecs)))) > ATOL:
            raise InvalidStateError("spectral vectors are not orthonormal")
        if self.noise_components:
            weights = np.array([w for w, _ in self.noise_components])
            if np.any(weights < 0) or abs(weights.sum() - 1) > ATOL:
                raise InvalidStateError("noise-component weights must be >= 0 and sum to 1")

    @property
    def num_qubits(self) -> int:
        return num_qubits_of(len(self.dominant))

    def density_matrix(self) -> DensityMatrix:
        m = (1 - self.epsilon) * ket_to_dm(self.dominant)
        for w, v in self.noise_components:
            m = m + self.epsilon * w * ket_to_dm(v)
        return DensityMatrix(m)


def spectral_decompose(rho) -> SpectralState:
    """Split a state into its dominant eigenvector and weighted noise components.

    Eigenpairs are ordered by descending eigenvalue with a stable sort, so ties
    keep the eigensolver's lowest-index-first order. A dominant gap below 1e-12
    emits ``DegenerateSpectrumWarning``.
    """
    m = as_array(rho)
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    order = np.argsort(-w, kind="stable")
    w, v = np.clip(w[order], 0.0, None), v[:, order]
    if len(w) > 1 and w[0] - w[1] < 1e-12:
        warnings.warn("dominant eigenvalue is degenerate; picking the lowest-index eigenvector",
                      DegenerateSpectrumWarning, stacklevel=2)
    eps = float(max(0.0, 1.0 - w[0]))
    comps = []
    if eps > 1e-14:
        for k in range(1, len(w)):
            if w[k] > 1e-14:
                comps.append((w[k], v[:, k]))
        total = sum(c[0] for c in comps)
        comps = tuple((float(c / total), vec) for c, vec in comps)
    return SpectralState(eps, v[:, 0], tuple(comps))


def vd_oracle(rho, observable, n: int) -> tuple[float, float]:
    """Return (Tr[rho^n O], Tr[rho^n]) by explicit matrix power."""
    if n < 2:
        raise ValueError("order n must be >= 2")
    m = as_array(rho)
    o = as_array(observable)
    rn = np.linalg.matrix_power(m, n)
    num = np.einsum("ij,ji->", rn, o)
    den = np.trace(rn)
    if abs(num.imag) > ATOL or abs(den.imag) > ATOL:
        raise ValueError("oracle traces have non-negligible imaginary parts; is O Hermitian?")
    return float(num.real), float(den.real)


# --- kernels -------------------------------------------------------------------------

def _target_axes(targets: Sequence[int], n: int) -> tuple[list[int], list[int]]:
    rows = list(targets)
    return rows, [q + n for q in rows]


def apply_left(t: np.ndarray, op: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Contract the input legs of ``op`` (2^m x 2^m) with tensor axes ``axes``."""
    m = len(axes)
    op_t = op.reshape((2,) * (2 * m))
    out = np.tensordot(op_t, t, axes=(list(range(m, 2 * m)), list(axes)))
    return np.moveaxis(out, list(range(m)), list(axes))


def apply_unitary(rho_t: np.ndarray, u: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """U rho U^dag on a (2,)*2n density tensor."""
    rows, cols = _target_axes(targets, n)
    t = apply_left(rho_t, u, rows)
    return apply_left(t, u.conj(), cols)


def apply_superoperator(rho_t: np.ndarray, sop: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Apply a row-major superoperator (4^m x 4^m) to the listed qubits of a density tensor."""
    m = len(targets)
    rows, cols = _target_axes(targets, n)
    s_t = sop.reshape((2,) * (4 * m))
    out = np.tensordot(s_t, rho_t, axes=(list(range(2 * m, 4 * m)), rows + cols))
    return np.moveaxis(out, list(range(2 * m)), rows + cols)


def embed_operator(op: np.ndarray, targets: Sequence[int], n: int) -> np.ndarray:
    """Full 2^n x 2^n matrix of ``op`` acting on ``targets``."""
    d = 1 << n
    eye = np.eye(d, dtype=complex).reshape((2,) * (2 * n))
    return np.ascontiguousarray(apply_left(eye, op, list(targets))).reshape(d, d)
