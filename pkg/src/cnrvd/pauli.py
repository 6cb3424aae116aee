"""Pauli matrices and Pauli-string observables."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=complex)

PAULI_MATRICES = {"I": I2, "X": X, "Y": Y, "Z": Z}
LETTERS = "IXYZ"

# +1 / -1 eigenvectors of each single-qubit Pauli. I uses the Z basis.
_EIGENSTATES = {
    "I": (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    "Z": (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    "X": (np.array([1, 1], dtype=complex) / np.sqrt(2), np.array([1, -1], dtype=complex) / np.sqrt(2)),
    "Y": (np.array([1, 1j], dtype=complex) / np.sqrt(2), np.array([1, -1j], dtype=complex) / np.sqrt(2)),
}

# Single-qubit rotations V with V P V^dag = Z, used to measure P in the computational basis.
BASIS_ROTATIONS = {"I": I2, "Z": I2, "X": H, "Y": H @ S.conj().T}


def eigenstate(letter: str, sign: int = +1) -> np.ndarray:
    """Single-qubit eigenvector of ``letter`` with eigenvalue ``sign``."""
    plus, minus = _EIGENSTATES[letter]
    return plus.copy() if sign > 0 else minus.copy()


def pauli_labels(m: int, include_identity: bool = False) -> list[str]:
    """All m-qubit Pauli labels in lexicographic I<X<Y<Z order."""
    labels = ["".join(p) for p in itertools.product(LETTERS, repeat=m)]
    return labels if include_identity else labels[1:]


def pauli_matrix(label: str) -> np.ndarray:
    """Dense matrix of a Pauli label; qubit 0 is the most significant factor."""
    return reduce(np.kron, (PAULI_MATRICES[c] for c in label), np.ones((1, 1), dtype=complex))


def multiply_letters(a: str, b: str) -> tuple[complex, str]:
    """Product of two single-qubit Paulis as (phase, letter)."""
    if a == "I":
        return 1, b
    if b == "I":
        return 1, a
    if a == b:
        return 1, "I"
    order = "XYZ"
    c = order[3 - order.index(a) - order.index(b)]
    cyclic = (order.index(b) - order.index(a)) % 3 == 1
    return (1j if cyclic else -1j), c


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis, one letter per qubit.

    ``letters[q]`` acts on qubit ``q``; qubit 0 is the leftmost Kronecker factor.
    """

    letters: str

    def __post_init__(self):
        if not self.letters or any(c not in LETTERS for c in self.letters):
            raise ValueError(f"invalid Pauli label {self.letters!r}")

    @classmethod
    def identity(cls, num_qubits: int) -> PauliString:
        return cls("I" * num_qubits)

    @classmethod
    def from_support(cls, num_qubits: int, support: dict[int, str]) -> PauliString:
        letters = ["I"] * num_qubits
        for q, c in support.items():
            letters[q] = c
        return cls("".join(letters))

    @classmethod
    def random(cls, num_qubits: int, weight: int, rng: np.random.Generator) -> PauliString:
        """Uniformly random support of the given weight with uniform X/Y/Z letters."""
        if not 0 <= weight <= num_qubits:
            raise ValueError("weight must lie in [0, num_qubits]")
        support = rng.choice(num_qubits, size=weight, replace=False)
        letters = rng.choice(list("XYZ"), size=weight)
        return cls.from_support(num_qubits, {int(q): str(c) for q, c in zip(support, letters)})

    @property
    def num_qubits(self) -> int:
        return len(self.letters)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, c in enumerate(self.letters) if c != "I")

    @property
    def weight(self) -> int:
        return len(self.support)

    @property
    def is_identity(self) -> bool:
        return self.weight == 0

    @cached_property
    def matrix(self) -> np.ndarray:
        m = pauli_matrix(self.letters)
        m.setflags(write=False)
        return m

    def expectation(self, rho) -> float:
        rho = np.asarray(getattr(rho, "matrix", rho))
        return float(np.real(np.einsum("ij,ji->", self.matrix, rho)))

    def __mul__(self, other: PauliString) -> tuple[complex, PauliString]:
        if other.num_qubits != self.num_qubits:
            raise ValueError("Pauli strings act on different qubit counts")
        phase, out = 1, []
        for a, b in zip(self.letters, other.letters):
            p, c = multiply_letters(a, b)
            phase *= p
            out.append(c)
        return phase, PauliString("".join(out))

    def commutes_with(self, other: PauliString) -> bool:
        anti = sum(1 for a, b in zip(self.letters, other.letters) if "I" not in (a, b) and a != b)
        return anti % 2 == 0

    def restricted(self, qubits) -> PauliString:
        return PauliString("".join(self.letters[q] for q in qubits))

    def __str__(self) -> str:
        return self.letters
