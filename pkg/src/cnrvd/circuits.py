"""Layered circuits, VD/GHZ/Hadamard-test builders and exact evolution.

A circuit is a tuple of layers. Each layer holds gates on disjoint qubits and
an optional list of noise channels applied after those gates. Qubit 0 is the
ancilla of every Hadamard-test-style circuit built here.

Two evaluation paths are provided. ``run_circuit`` evolves a full density
matrix forward. ``ancilla_effect`` pulls the ancilla projector |0><0| back
through the adjoint layers once, after which ``p0`` for any number of inputs
is a single trace each.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .channels import GateNoiseModel, NoiseLevelConfig, QuantumChannel, apply_channel_tensor, unitary_superop
from .errors import CircuitError, CircuitShapeError, ConfigError
from .pauli import H as H_MAT
from .pauli import PAULI_MATRICES, PauliString
from .tensor import (ATOL, DensityMatrix, apply_superoperator, apply_unitary, as_array, check_qubit_cap,
                     embed_operator, kron_all, num_qubits_of)

SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def controlled(u: np.ndarray) -> np.ndarray:
    """|0><0| (x) I + |1><1| (x) U with the control as the first qubit."""
    u = as_array(u)
    return np.kron(P0, np.eye(u.shape[0])) + np.kron(P1, u)


CSWAP = controlled(SWAP)
_FIXED = {
    "H": H_MAT, "X": PAULI_MATRICES["X"], "Y": PAULI_MATRICES["Y"], "Z": PAULI_MATRICES["Z"],
    "I": PAULI_MATRICES["I"], "CX": controlled(PAULI_MATRICES["X"]), "CY": controlled(PAULI_MATRICES["Y"]),
    "CZ": controlled(PAULI_MATRICES["Z"]), "CSWAP": CSWAP, "SWAP": SWAP,
}
CLIFFORD_KINDS = {"H", "X", "Y", "Z", "I", "CX", "CY", "CZ", "SWAP", "S"}


@dataclass(frozen=True, eq=False)
class Gate:
    kind: str
    targets: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(as_array(self.matrix), dtype=complex)
        if m.shape != (1 << len(self.targets),) * 2:
            raise CircuitError(f"{self.kind} on {len(self.targets)} qubits needs a "
                               f"{1 << len(self.targets)}-dim matrix, got {m.shape}")
        if len(set(self.targets)) != len(self.targets):
            raise CircuitError(f"{self.kind} has repeated targets {self.targets}")
        if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > ATOL:
            raise CircuitError(f"{self.kind} matrix is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))

    @classmethod
    def named(cls, kind: str, *targets: int) -> Gate:
        return cls(kind, tuple(targets), _FIXED[kind])

    @classmethod
    def pauli(cls, letter: str, q: int) -> Gate:
        return cls(letter, (q,), PAULI_MATRICES[letter])

    @classmethod
    def controlled_pauli(cls, letter: str, control: int, target: int) -> Gate:
        return cls(f"C{letter}", (control, target), _FIXED[f"C{letter}"])

    @classmethod
    def cswap(cls, control: int, a: int, b: int) -> Gate:
        return cls("CSWAP", (control, a, b), CSWAP)

    @classmethod
    def controlled_u(cls, u: np.ndarray, control: int, targets: Sequence[int]) -> Gate:
        return cls("CU", (control, *targets), controlled(u))

    @classmethod
    def custom(cls, u: np.ndarray, targets: Sequence[int], kind: str = "U") -> Gate:
        return cls(kind, tuple(targets), u)

    @property
    def arity(self) -> int:
        return len(self.targets)

    def __str__(self) -> str:
        return f"{self.kind} {list(self.targets)}"


@dataclass(frozen=True)
class NoiseOp:
    channel: QuantumChannel
    targets: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))
        if len(self.targets) != self.channel.num_qubits:
            raise CircuitError(f"{self.channel.num_qubits}-qubit channel attached to {len(self.targets)} targets")


@dataclass(frozen=True, eq=False)
class Layer:
    gates: tuple[Gate, ...] = ()
    noise: tuple[NoiseOp, ...] = ()
    tag: str = ""

    def __post_init__(self):
        seen: set[int] = set()
        for g in self.gates:
            if seen & set(g.targets):
                raise CircuitError(f"overlapping gate targets in layer {self.tag or '?'}")
            seen |= set(g.targets)

    @property
    def qubits(self) -> set[int]:
        return {q for g in self.gates for q in g.targets}

    def unitary(self, n: int) -> np.ndarray:
        u = np.eye(1 << n, dtype=complex)
        for g in self.gates:
            u = embed_operator(g.matrix, g.targets, n) @ u
        return u

    def noise_superoperator(self, n: int) -> np.ndarray | None:
        if not self.noise:
            return None
        d = 1 << n
        s = np.eye(d * d, dtype=complex)
        for op in self.noise:
            s = _embed_superop(op.channel, op.targets, n) @ s
        return s

    @cached_property
    def fused(self) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]] | None:
        """(superop, adjoint superop, targets) of noise-after-gate when they share targets."""
        if len(self.gates) != 1 or len(self.noise) != 1:
            return None
        g, op = self.gates[0], self.noise[0]
        if set(g.targets) != set(op.targets) or g.arity > 3 or op.channel.depolarizing_rate is not None and op.channel.num_qubits > 3:
            return None
        perm = [g.targets.index(q) for q in op.targets]
        u = _permute_operator(g.matrix, perm)
        s = op.channel.superoperator @ unitary_superop(u)
        return s, np.ascontiguousarray(s.conj().T), op.targets


def _permute_operator(u: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Re-express an operator on qubits ``t`` in the order ``t[perm[0]], t[perm[1]], ...``."""
    m = len(perm)
    t = u.reshape((2,) * (2 * m))
    axes = list(perm) + [p + m for p in perm]
    return t.transpose(axes).reshape(u.shape)


def _embed_superop(ch: QuantumChannel, targets: Sequence[int], n: int) -> np.ndarray:
    d = 1 << n
    eye = np.eye(d * d, dtype=complex).reshape((2,) * (2 * n) + (d * d,))
    # Apply the channel to each basis matrix E_ab (columns of the identity superop).
    cols = np.moveaxis(eye, -1, 0)
    out = np.stack([apply_channel_tensor(c, ch, targets, n) for c in cols], axis=-1)
    return out.reshape(d * d, d * d)


@dataclass(frozen=True)
class VDLayout:
    order: int
    qubits_per_copy: int
    observable: PauliString
    cswap_layers: tuple[int, ...]
    co_layers: tuple[int, ...]
    first_h: int = 0
    final_h: int = -1


@dataclass(frozen=True, eq=False)
class Circuit:
    num_qubits: int
    layers: tuple[Layer, ...] = ()
    layout: VDLayout | None = None
    annotations: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        check_qubit_cap(self.num_qubits)
        object.__setattr__(self, "layers", tuple(self.layers))
        for layer in self.layers:
            for g in layer.gates:
                if max(g.targets) >= self.num_qubits or min(g.targets) < 0:
                    raise CircuitError(f"{g} outside a {self.num_qubits}-qubit register")
            for op in layer.noise:
                if max(op.targets) >= self.num_qubits or min(op.targets) < 0:
                    raise CircuitError(f"noise on {list(op.targets)} outside the register")

    @property
    def gates(self) -> list[Gate]:
        return [g for layer in self.layers for g in layer.gates]

    @property
    def is_noisy(self) -> bool:
        return any(layer.noise for layer in self.layers)

    def ideal(self) -> Circuit:
        return replace(self, layers=tuple(Layer(l.gates, (), l.tag) for l in self.layers))

    def unitary(self) -> np.ndarray:
        u = np.eye(1 << self.num_qubits, dtype=complex)
        for layer in self.layers:
            u = layer.unitary(self.num_qubits) @ u
        return u

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)

    def annotation(self, key: str, default: str | None = None) -> str | None:
        return dict(self.annotations).get(key, default)

    def dump(self) -> str:
        """Human-readable listing: one gate per line with its attached noise."""
        lines = [f"circuit on {self.num_qubits} qubits, {len(self.layers)} layers"]
        for key, val in self.annotations:
            lines.append(f"# {key}: {val}")
        for i, layer in enumerate(self.layers):
            tag = f" ({layer.tag})" if layer.tag else ""
            noise = "; ".join(f"{op.channel.label} on {list(op.targets)}" for op in layer.noise)
            for j, g in enumerate(layer.gates):
                suffix = f" | noise: {noise}" if noise and j == len(layer.gates) - 1 else ""
                lines.append(f"{i:3d}{tag}: {g}{suffix}")
            if not layer.gates and noise:
                lines.append(f"{i:3d}{tag}: noise: {noise}")
        return "\n".join(lines)


# --- builders ------------------------------------------------------------------------

def _resolve_noise(noise, rng: np.random.Generator | None = None) -> GateNoiseModel | None:
    if noise is None or isinstance(noise, GateNoiseModel):
        return noise
    if isinstance(noise, NoiseLevelConfig):
        if noise.model_kind == "stochastic-pauli":
            if rng is None:
                raise ConfigError("stochastic Pauli noise needs an rng to draw its coefficients")
            return GateNoiseModel.stochastic_pauli(noise.noise_level, rng)
        if noise.model_kind == "composite-depol-damping":
            return GateNoiseModel.composite(noise.noise_level)
        if noise.model_kind == "global-depolarizing":
            return GateNoiseModel.global_depolarizing(noise.noise_level)
        return GateNoiseModel.depolarizing(noise.noise_level)
    raise ConfigError(f"unsupported noise argument {noise!r}")


def noisy_layer(gate: Gate, noise: GateNoiseModel | None, n: int, tag: str = "") -> Layer:
    if noise is None or gate.arity < 2:
        return Layer((gate,), (), tag)
    ch = noise.channel_for(gate.arity, n)
    targets = tuple(range(n)) if noise.scope == "global" else gate.targets
    return Layer((gate,), (NoiseOp(ch, targets),), tag)


def _as_observable(o, N: int) -> PauliString:
    if o is None:
        return PauliString.identity(N)
    if isinstance(o, str):
        o = PauliString(o)
    if o.num_qubits != N:
        raise CircuitShapeError(f"observable acts on {o.num_qubits} qubits, copies have {N}")
    return o


def vd_register_size(n: int, N: int) -> int:
    return n * N + 1


def build_vd_circuit(n: int, N: int, o=None, noise=None, rng: np.random.Generator | None = None) -> Circuit:
    """Order-n virtual distillation circuit on nN+1 qubits (ancilla = qubit 0).

    Copy t occupies qubits 1+tN .. (t+1)N. The controlled derangement is the
    chain of CSWAP(0, 1+i+tN, 1+i+(t+1)N) for t < n-1 and i < N, followed by
    controlled Paulis from the ancilla onto the support of ``o`` in copy 0.
    """
    if n < 2 or N < 1:
        raise CircuitShapeError("VD needs order n >= 2 and N >= 1")
    nq = vd_register_size(n, N)
    check_qubit_cap(nq)
    obs = _as_observable(o, N)
    model = _resolve_noise(noise, rng)
    layers = [Layer((Gate.named("H", 0),), (), "H")]
    cswaps = []
    for t in range(n - 1):
        for i in range(N):
            cswaps.append(len(layers))
            layers.append(noisy_layer(Gate.cswap(0, 1 + i + t * N, 1 + i + (t + 1) * N), model, nq, f"cswap[{i},{t}]"))
    cos = []
    for q in obs.support:
        cos.append(len(layers))
        layers.append(noisy_layer(Gate.controlled_pauli(obs.letters[q], 0, 1 + q), model, nq, f"co[{q}]"))
    layers.append(Layer((Gate.named("H", 0),), (), "H"))
    layout = VDLayout(n, N, obs, tuple(cswaps), tuple(cos), 0, len(layers) - 1)
    notes = (("kind", "vd"), ("observable", obs.letters),
             ("noise", "none" if model is None else f"{model.kind}@{model.level:g}"))
    return Circuit(nq, tuple(layers), layout, notes)


def build_swap_test(N: int, noise=None, rng: np.random.Generator | None = None) -> Circuit:
    """SWAP test of two N-qubit registers: the order-2 VD circuit with O = I."""
    c = build_vd_circuit(2, N, None, noise, rng)
    return replace(c, annotations=(("kind", "swap-test"),) + c.annotations[1:])


def build_ghz_circuit(N: int, noise=None) -> Circuit:
    """H on qubit 0 then CX(0,1), CX(1,2), ...; ``noise=True`` means composite noise at 1e-3."""
    if N < 2:
        raise CircuitShapeError("GHZ preparation needs N >= 2")
    if noise is True:
        noise = GateNoiseModel.composite(1e-3)
    elif isinstance(noise, (int, float)) and not isinstance(noise, bool):
        noise = GateNoiseModel.composite(float(noise))
    model = _resolve_noise(noise)
    layers = [Layer((Gate.named("H", 0),), (), "H")]
    for q in range(N - 1):
        layers.append(noisy_layer(Gate.named("CX", q, q + 1), model, N, f"cx[{q}]"))
    return Circuit(N, tuple(layers), None, (("kind", "ghz"),))


def build_hadamard_test(u, noise=None, rng: np.random.Generator | None = None) -> Circuit:
    """H, controlled-U from ancilla 0 onto qubits 1.., H. Noiseless 2p0-1 = Re Tr[rho U]."""
    u = as_array(u)
    m = num_qubits_of(u.shape[0])
    model = _resolve_noise(noise, rng)
    nq = m + 1
    cu = Gate.controlled_u(u, 0, list(range(1, nq)))
    layers = (Layer((Gate.named("H", 0),), (), "H"), noisy_layer(cu, model, nq, "cu"),
              Layer((Gate.named("H", 0),), (), "H"))
    return Circuit(nq, layers, None, (("kind", "hadamard-test"),))


# --- evolution -----------------------------------------------------------------------

_SIGN = np.array([1.0, -1.0])


def _conjugate_by_paulis(t: np.ndarray, gates: Sequence[Gate], n: int) -> np.ndarray:
    """P X P for a product of single-qubit Paulis, via axis flips and sign vectors."""
    for g in gates:
        q = g.targets[0]
        for ax in (q, q + n):
            if g.kind in ("Z", "Y"):
                shape = [1] * (2 * n)
                shape[ax] = 2
                t = t * _SIGN.reshape(shape)
            if g.kind in ("X", "Y"):
                t = np.flip(t, axis=ax)
    return t


def _is_pauli_layer(layer: Layer) -> bool:
    return not layer.noise and all(g.kind in ("X", "Y", "Z") and g.arity == 1 for g in layer.gates)


def _layer_forward(t: np.ndarray, layer: Layer, n: int) -> np.ndarray:
    if _is_pauli_layer(layer):
        return _conjugate_by_paulis(t, layer.gates, n)
    f = layer.fused
    if f is not None:
        return apply_superoperator(t, f[0], f[2], n)
    for g in layer.gates:
        t = apply_unitary(t, g.matrix, g.targets, n)
    for op in layer.noise:
        t = apply_channel_tensor(t, op.channel, op.targets, n)
    return t


def _layer_adjoint(t: np.ndarray, layer: Layer, n: int) -> np.ndarray:
    if _is_pauli_layer(layer):
        return _conjugate_by_paulis(t, layer.gates, n)
    f = layer.fused
    if f is not None:
        return apply_superoperator(t, f[1], f[2], n)
    for op in reversed(layer.noise):
        t = apply_channel_tensor(t, op.channel, op.targets, n, adjoint=True)
    for g in reversed(layer.gates):
        t = apply_unitary(t, g.matrix.conj().T, g.targets, n)
    return t


def run_circuit(c: Circuit, state) -> DensityMatrix:
    m = as_array(state)
    if m.shape != (1 << c.num_qubits,) * 2:
        raise CircuitError(f"state of shape {m.shape} does not fit a {c.num_qubits}-qubit circuit")
    n = c.num_qubits
    t = m.reshape((2,) * (2 * n))
    for layer in c.layers:
        t = _layer_forward(t, layer, n)
    return DensityMatrix.unchecked(np.ascontiguousarray(t).reshape(m.shape))


def p0_ancilla(c: Circuit, state) -> float:
    """Probability of reading 0 on qubit 0 after running ``c`` on ``state``."""
    out = run_circuit(c, state).matrix
    h = out.shape[0] // 2
    return float(np.real(np.trace(out[:h, :h])))


def ancilla_effect(c: Circuit) -> np.ndarray:
    """Data-register operator E with p0 = Tr[E sigma] for input |0><0| (x) sigma."""
    n = c.num_qubits
    d = 1 << n
    m = np.zeros((d, d), dtype=complex)
    h = d // 2
    m[:h, :h] = np.eye(h)
    t = m.reshape((2,) * (2 * n))
    for layer in reversed(c.layers):
        t = _layer_adjoint(t, layer, n)
    full = np.ascontiguousarray(t).reshape(d, d)
    return np.ascontiguousarray(full[:h, :h])


def trace_product(effect: np.ndarray, data) -> float:
    """Re Tr[E sigma] without forming the matrix product."""
    s = as_array(data)
    return float(np.real(np.einsum("ij,ji->", effect, s)))


def vd_data_state(rho, n: int, first=None) -> np.ndarray:
    """first (x) rho^(n-1); ``first`` defaults to rho."""
    r = as_array(rho)
    f = r if first is None else as_array(first)
    return kron_all([f] + [r] * (n - 1))


def vd_input(rho, n: int, first=None) -> DensityMatrix:
    """|0><0| on the ancilla followed by the n data copies."""
    return DensityMatrix.unchecked(np.kron(P0, vd_data_state(rho, n, first)))


def product_input(states: Iterable) -> DensityMatrix:
    """Ancilla |0> followed by the given data states (vectors or matrices)."""
    mats = []
    for s in states:
        a = np.asarray(getattr(s, "matrix", s), dtype=complex)
        mats.append(np.outer(a, a.conj()) if a.ndim == 1 else a)
    return DensityMatrix.unchecked(np.kron(P0, kron_all(mats)))
