"""Randomized compiling for the VD circuit.

The CSWAP chain is twirled by a Pauli T that every CSWAP maps to itself:
an {I, Z} letter on the ancilla and, for each data index j, one letter placed
on qubit j of every copy. The controlled-O chain is Clifford, so it is
twirled by a uniform Pauli P and undone by CO P CO^dag. After merging, three
noiseless Pauli layers remain:

    A = T            right after the first H (absorbable into preparation)
    B = T P          between the CSWAP chain and the controlled-O chain
    C = (CO P CO^dag) restricted to the ancilla, right before the final H

Pauli signs are global phases of a unitary gate and drop out of every
probability, so no classical sign correction is recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .circuits import Circuit, Gate, Layer
from .errors import CircuitShapeError, NotCliffordError
from .pauli import LETTERS, PauliString, pauli_labels, pauli_matrix

_TWIRL_TAGS = ("twirl-A", "twirl-B", "twirl-C")


def cswap_twirl_set() -> list[PauliString]:
    """The 8 three-qubit Paulis (control, target, target) fixed by CSWAP conjugation."""
    return [PauliString(c + t + t) for c in "IZ" for t in "IXYZ"]


def preserved_by(u: np.ndarray, p: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(u @ p @ u.conj().T - p)) < atol)


def _conjugate_local(u: np.ndarray, label: str) -> tuple[int, str]:
    """U P U^dag = sign * Q for a Pauli label on the gate's qubits."""
    m = len(label)
    d = 1 << m
    conj = u @ pauli_matrix(label) @ u.conj().T
    for q in pauli_labels(m, include_identity=True):
        c = np.einsum("ij,ji->", pauli_matrix(q), conj) / d
        if abs(abs(c) - 1) < 1e-9:
            if abs(c.imag) > 1e-9:
                raise NotCliffordError("conjugated Pauli picked up an imaginary phase")
            return (1 if c.real > 0 else -1), q
    raise NotCliffordError(f"gate does not map Pauli {label} to a Pauli")


def conjugate_through_clifford(p: PauliString, clifford) -> tuple[int, PauliString]:
    """(sign, Q) with C P C^dag = sign * Q, where C is the product of the gates in order.

    ``clifford`` is a Circuit or a sequence of gates. Each gate is checked by
    projecting its conjugation of the current Pauli onto the Pauli basis, so
    any gate that maps Paulis to Paulis is accepted.
    """
    gates = clifford.gates if isinstance(clifford, Circuit) else list(clifford)
    letters = list(p.letters)
    sign = 1
    for g in gates:
        sub = "".join(letters[q] for q in g.targets)
        if set(sub) <= {"I"}:
            continue
        s, q = _conjugate_local(g.matrix, sub)
        sign *= s
        for t, c in zip(g.targets, q):
            letters[t] = c
    return sign, PauliString("".join(letters))


@dataclass(frozen=True)
class TwirlInstance:
    order: int
    qubits_per_copy: int
    cswap_twirl: PauliString
    co_twirl: PauliString
    co_conjugate: PauliString
    co_sign: int

    @property
    def num_qubits(self) -> int:
        return self.order * self.qubits_per_copy + 1

    @property
    def pair_letters(self) -> str:
        """Control letter followed by the per-index data letters."""
        return self.cswap_twirl.letters[0] + self.cswap_twirl.letters[1:1 + self.qubits_per_copy]

    @property
    def compiled_layers(self) -> tuple[PauliString, PauliString, PauliString]:
        a = self.cswap_twirl
        _, b = self.cswap_twirl * self.co_twirl
        c = PauliString(self.co_conjugate.letters[0] + "I" * (self.num_qubits - 1))
        return a, b, c

    def describe(self) -> str:
        a, b, c = self.compiled_layers
        return f"T={a} P={self.co_twirl} Ptw={'+' if self.co_sign > 0 else '-'}{self.co_conjugate} A={a} B={b} C={c}"

    @property
    def is_identity(self) -> bool:
        return all(p.is_identity for p in self.compiled_layers)


def _co_chain(c: Circuit) -> list[Gate]:
    return [g for i in c.layout.co_layers for g in c.layers[i].gates]


def _cswap_twirl_string(control: str, data: Sequence[str], n: int) -> PauliString:
    return PauliString(control + "".join(data) * n)


def draw_twirl_instance(c: Circuit, rng: np.random.Generator) -> TwirlInstance:
    if c.layout is None:
        raise CircuitShapeError("twirling needs a circuit built by build_vd_circuit")
    n, N = c.layout.order, c.layout.qubits_per_copy
    control = str(rng.choice(["I", "Z"]))
    data = [str(x) for x in rng.choice(list(LETTERS), size=N)]
    t = _cswap_twirl_string(control, data, n)
    p = PauliString("".join(str(x) for x in rng.choice(list(LETTERS), size=c.num_qubits)))
    sign, ptw = conjugate_through_clifford(p, _co_chain(c))
    return TwirlInstance(n, N, t, p, ptw, sign)


def identity_instance(c: Circuit) -> TwirlInstance:
    n, N = c.layout.order, c.layout.qubits_per_copy
    ident = PauliString.identity(c.num_qubits)
    return TwirlInstance(n, N, ident, ident, ident, 1)


def _pauli_layer(p: PauliString, tag: str) -> Layer:
    return Layer(tuple(Gate.pauli(ch, q) for q, ch in enumerate(p.letters) if ch != "I"), (), tag)


def compile_twirled_vd(c: Circuit, instance) -> Circuit:
    """Insert the three merged Pauli layers of a twirl instance into a VD circuit.

    ``instance`` is a TwirlInstance, an integer seed, or a numpy Generator.
    """
    if c.layout is None or any(l.tag in _TWIRL_TAGS for l in c.layers):
        raise CircuitShapeError("circuit is not an untwirled VD circuit")
    if not isinstance(instance, TwirlInstance):
        rng = instance if isinstance(instance, np.random.Generator) else np.random.default_rng(instance)
        instance = draw_twirl_instance(c, rng)
    if (instance.order, instance.qubits_per_copy) != (c.layout.order, c.layout.qubits_per_copy):
        raise CircuitShapeError("twirl instance drawn for a different VD shape")
    a, b, cc = instance.compiled_layers
    lay = c.layout
    first_cswap = lay.cswap_layers[0]
    after_cswap = lay.cswap_layers[-1] + 1
    layers = list(c.layers)
    new = (layers[:first_cswap] + [_pauli_layer(a, "twirl-A")] + layers[first_cswap:after_cswap]
           + [_pauli_layer(b, "twirl-B")] + layers[after_cswap:-1] + [_pauli_layer(cc, "twirl-C")]
           + layers[-1:])
    shift = lambda idx, k: tuple(i + k for i in idx)
    layout = replace(lay, cswap_layers=shift(lay.cswap_layers, 1), co_layers=shift(lay.co_layers, 2),
                     final_h=len(new) - 1)
    notes = c.annotations + (("twirl", instance.describe()),)
    return Circuit(c.num_qubits, tuple(new), layout, notes)


@dataclass
class TwirlPlan:
    """R twirl instances per observable circuit, drawn once and then reused.

    Keep one plan per experiment so calibration circuits and amplified-noise
    reruns see exactly the same instances as the main circuits.
    """

    instances: int
    rng: np.random.Generator
    _drawn: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.instances < 1:
            raise ValueError("need at least one twirl instance")

    def instances_for(self, c: Circuit) -> list[TwirlInstance]:
        key = (c.layout.order, c.layout.qubits_per_copy, c.layout.observable.letters)
        if key not in self._drawn:
            self._drawn[key] = [draw_twirl_instance(c, self.rng) for _ in range(self.instances)]
        return self._drawn[key]

    def circuits_for(self, c: Circuit) -> list[Circuit]:
        return [compile_twirled_vd(c, inst) for inst in self.instances_for(c)]


# --- process-matrix diagnostics ------------------------------------------------------

def process_matrix(sop: np.ndarray) -> np.ndarray:
    """chi with E(rho) = sum_ab chi_ab P_a rho P_b in the lexicographic Pauli basis."""
    from .channels import superop_to_choi
    d = int(round(np.sqrt(sop.shape[0])))
    m = d.bit_length() - 1
    v = np.stack([pauli_matrix(lab).reshape(-1) for lab in pauli_labels(m, include_identity=True)], axis=1)
    return v.conj().T @ superop_to_choi(sop) @ v / d**2


def offdiagonal_mass(chi: np.ndarray) -> float:
    return float(np.sum(np.abs(chi)) - np.sum(np.abs(np.diag(chi))))


def pauli_conjugated_superop(sop: np.ndarray, p: PauliString) -> np.ndarray:
    """Superoperator of rho -> P E(P rho P) P."""
    sp = np.kron(p.matrix, p.matrix.conj())
    return sp @ sop @ sp


def twirled_superop(sop: np.ndarray, paulis: Sequence[PauliString]) -> np.ndarray:
    return sum(pauli_conjugated_superop(sop, p) for p in paulis) / len(paulis)


def twirled_estimate(estimator, R: int, sampler, rho, o, n: int = 2, noise=None,
                     rng: np.random.Generator | None = None, **kwargs):
    """Run ``estimator`` with every circuit replaced by R fixed twirl instances.

    Probabilities are averaged over the instances before any ratio is formed,
    and the shots of each circuit are split evenly across its instances.
    """
    from .estimators import VDBackend
    from .tensor import as_array

    if R < 1:
        raise ValueError("R must be >= 1")
    N = as_array(rho).shape[0].bit_length() - 1
    plan = TwirlPlan(R, rng if rng is not None else np.random.default_rng())
    backend = VDBackend(n, N, noise, twirl=plan)
    return estimator(rho, o, n, backend, sampler, **kwargs)
