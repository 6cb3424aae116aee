"""Classical readout-error model and iterative Bayesian unfolding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .tensor import kron_all

STOCHASTIC_ATOL = 1e-10
IBU_FLOOR = 1e-15
IBU_ITERATIONS = 100


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Lambda[x, y] = P(read x | prepared y); columns are distributions.

    ``factors`` holds per-qubit 2x2 matrices whose tensor product is the
    tensor-product-noise estimate used for unfolding.
    """

    num_qubits: int
    matrix: np.ndarray
    factors: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        d = 1 << self.num_qubits
        if m.shape != (d, d):
            raise ConfigError(f"transfer matrix for {self.num_qubits} qubits must be {d}x{d}, got {m.shape}")
        if np.any(m < -STOCHASTIC_ATOL) or np.any(m > 1 + STOCHASTIC_ATOL):
            raise ConfigError("transfer matrix entries must lie in [0, 1]")
        if np.max(np.abs(m.sum(axis=0) - 1)) > STOCHASTIC_ATOL:
            raise ConfigError("transfer matrix columns must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.factors is not None:
            fs = tuple(np.array(f, dtype=float) for f in self.factors)
            if len(fs) != self.num_qubits or any(f.shape != (2, 2) for f in fs):
                raise ConfigError("need one 2x2 factor per qubit")
            object.__setattr__(self, "factors", fs)

    @classmethod
    def identity(cls, num_qubits: int) -> TransferMatrix:
        return cls(num_qubits, np.eye(1 << num_qubits), tuple(np.eye(2) for _ in range(num_qubits)))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> TransferMatrix:
        """Full matrix with per-qubit factors estimated from its all-0 and all-1 columns."""
        m = np.asarray(matrix, dtype=float)
        n = m.shape[0].bit_length() - 1
        return cls(n, m, tpn_factors(m, n))

    def tpn(self) -> TransferMatrix:
        """The tensor-product estimate built from the stored factors."""
        fs = self.factors if self.factors is not None else tpn_factors(self.matrix, self.num_qubits)
        return TransferMatrix(self.num_qubits, kron_all(fs).real, fs)

    def marginal(self, qubits: Sequence[int]) -> TransferMatrix:
        """Transfer matrix of a subset of qubits, the others prepared in 0."""
        qubits = list(qubits)
        n = self.num_qubits
        t = self.matrix.reshape((2,) * (2 * n))
        rest = [q for q in range(n) if q not in qubits]
        idx = [slice(None)] * (2 * n)
        for q in rest:
            idx[n + q] = 0
        t = t[tuple(idx)]
        t = t.sum(axis=tuple(rest)) if rest else t
        k = len(qubits)
        fs = None if self.factors is None else tuple(self.factors[q] for q in qubits)
        return TransferMatrix(k, t.reshape(1 << k, 1 << k), fs)


def tpn_factors(m: np.ndarray, n: int) -> tuple[np.ndarray, ...]:
    d = 1 << n
    out = []
    for q in range(n):
        f = np.zeros((2, 2))
        for col, y in ((0, 0), (1, d - 1)):
            p = m[:, y].reshape((2,) * n)
            f[:, col] = p.sum(axis=tuple(i for i in range(n) if i != q))
        out.append(f)
    return tuple(out)


def _single_qubit(p10: float, p01: float) -> np.ndarray:
    """Columns: prepared 0 -> (1-p10, p10); prepared 1 -> (p01, 1-p01)."""
    return np.array([[1 - p10, p01], [p10, 1 - p01]])


def build_transfer_matrix(p10: Sequence[float], p01: Sequence[float], correlation: float = 0.0) -> TransferMatrix:
    """Synthetic readout model: independent flips plus correlated neighbour flips.

    ``p10[q]`` is P(read 1 | prepared 0) on qubit q and ``p01[q]`` the reverse.
    Each adjacent pair additionally flips together with probability
    ``correlation``. The stored factors are the tensor-product estimate read
    off the full matrix, so they absorb the correlated part only partially.
    """
    p10, p01 = list(map(float, p10)), list(map(float, p01))
    if len(p10) != len(p01) or not p10:
        raise ConfigError("need matching per-qubit flip rates")
    if any(not 0 <= r <= 0.5 for r in p10 + p01) or not 0 <= correlation <= 0.5:
        raise ConfigError("flip rates and correlation must lie in [0, 0.5]")
    n = len(p10)
    lam = kron_all([_single_qubit(a, b) for a, b in zip(p10, p01)]).real
    if correlation > 0 and n > 1:
        x = np.array([[0, 1], [1, 0]], dtype=float)
        pair = (1 - correlation) * np.eye(4) + correlation * np.kron(x, x)
        for q in range(n - 1):
            lam = kron_all([np.eye(1 << q), pair, np.eye(1 << (n - q - 2))]).real @ lam
        return TransferMatrix(n, lam, tpn_factors(lam, n))
    return TransferMatrix(n, lam, tuple(_single_qubit(a, b) for a, b in zip(p10, p01)))


def random_transfer_matrix(n: int, rng: np.random.Generator, mean_p10: float = 0.02,
                           mean_p01: float = 0.05, correlation: float = 0.01) -> TransferMatrix:
    """Transfer matrix with per-qubit rates drawn uniformly in [0.5, 1.5] x the means."""
    p10 = rng.uniform(0.5, 1.5, size=n) * mean_p10
    p01 = rng.uniform(0.5, 1.5, size=n) * mean_p01
    return build_transfer_matrix(p10, p01, correlation)


def save_transfer_matrix(path, tm: TransferMatrix) -> None:
    """Plain text, one row per prepared (ideal) outcome y holding P(x | y) over x."""
    path = Path(path)
    try:
        np.savetxt(path, tm.matrix.T, fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write transfer matrix to {path}: {exc}") from exc


def load_transfer_matrix(path) -> TransferMatrix:
    path = Path(path)
    try:
        rows = np.loadtxt(path, ndmin=2)
    except OSError as exc:
        raise OSError(f"cannot read transfer matrix from {path}: {exc}") from exc
    if np.max(np.abs(rows.sum(axis=1) - 1)) > STOCHASTIC_ATOL:
        raise ConfigError(f"{path}: each row (ideal outcome) must sum to 1")
    return TransferMatrix.from_matrix(rows.T)


def ibu_unfold(noisy, lam, iterations: int = IBU_ITERATIONS, prior=None, history: list | None = None) -> np.ndarray:
    """Iterative Bayesian unfolding of a measured distribution.

    m_i <- sum_j Lambda_ji m_i / (sum_k Lambda_jk m_k) * r_j, starting from a
    uniform prior unless one is given. Denominators are floored at 1e-15.
    """
    r = np.asarray(noisy, dtype=float)
    if abs(r.sum() - 1) > 1e-9 or np.any(r < -1e-12):
        raise ConfigError("noisy distribution must be a probability vector")
    if iterations < 1:
        raise ConfigError("IBU needs at least one iteration")
    a = lam.matrix if isinstance(lam, TransferMatrix) else np.asarray(lam, dtype=float)
    m = np.full(len(r), 1.0 / len(r)) if prior is None else np.asarray(prior, dtype=float).copy()
    for _ in range(iterations):
        pred = np.maximum(a @ m, IBU_FLOOR)
        m = m * (a.T @ (r / pred))
        m = m / m.sum()
        if history is not None:
            history.append(m.copy())
    return m


def apply_readout(dist: np.ndarray, tm: TransferMatrix | None) -> np.ndarray:
    if tm is None:
        return np.asarray(dist, dtype=float)
    return tm.matrix @ dist
