"""Kraus-representation noise channels and the effective-noise analysis.

Superoperators use row-major vectorisation, so a channel with Kraus set
{K} acts as ``S = sum K (x) K*`` on ``vec(rho)`` and ``vec(U rho U^dag) =
(U (x) U*) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidChannelError, QubitCapError
from .pauli import pauli_labels, pauli_matrix
from .tensor import DensityMatrix, apply_superoperator, as_array, num_qubits_of

CPTP_ATOL = 1e-9
# Largest register for which Kraus/superoperator matrices are materialised.
DENSE_CHANNEL_MAX_QUBITS = 5
EFFECTIVE_NOISE_MAX_QUBITS = 5

MODEL_KINDS = ("stochastic-pauli", "composite-depol-damping", "depolarizing", "global-depolarizing")


@dataclass(frozen=True)
class ChannelReport:
    cptp: bool
    unital: bool
    tp_residual: float
    unital_residual: float

    @property
    def max_residual(self) -> float:
        return max(self.tp_residual, self.unital_residual)


class QuantumChannel:
    """CPTP map on ``num_qubits`` qubits given by a finite Kraus set.

    A depolarizing channel also records its rate so the simulator can apply
    it in closed form on registers too large for a dense Kraus set.
    """

    def __init__(self, kraus: Iterable, validate: bool = True, label: str = "kraus",
                 config: Mapping | None = None, depolarizing_rate: float | None = None,
                 num_qubits: int | None = None):
        ks = tuple(np.array(as_array(k), dtype=complex) for k in kraus) if kraus is not None else None
        if ks is not None:
            if not ks:
                raise InvalidChannelError("a channel needs at least one Kraus operator")
            d = ks[0].shape[0]
            for k in ks:
                if k.shape != (d, d):
                    raise InvalidChannelError(f"Kraus operators must all be {d}x{d}, got {k.shape}")
                k.setflags(write=False)
            n = num_qubits_of(d)
            if num_qubits is not None and num_qubits != n:
                raise InvalidChannelError(f"Kraus dimension {d} does not match {num_qubits} qubits")
        else:
            if depolarizing_rate is None or num_qubits is None:
                raise InvalidChannelError("Kraus-free channels must be depolarizing with explicit size")
            n = num_qubits
        self.num_qubits = n
        self._kraus = ks
        self.label = label
        self.config = dict(config) if config else {"kind": "kraus", "qubits": n}
        self.depolarizing_rate = depolarizing_rate
        if validate and ks is not None:
            rep = check_channel(self)
            if not rep.cptp:
                raise InvalidChannelError(f"channel is not trace preserving (residual {rep.tp_residual:.3e})")

    @property
    def kraus(self) -> tuple[np.ndarray, ...]:
        if self._kraus is None:
            raise InvalidChannelError(
                f"{self.num_qubits}-qubit depolarizing channel is applied in closed form; "
                "its Kraus set is not materialised")
        return self._kraus

    @property
    def dim(self) -> int:
        return 1 << self.num_qubits

    @cached_property
    def superoperator(self) -> np.ndarray:
        if self._kraus is None and self.num_qubits > DENSE_CHANNEL_MAX_QUBITS:
            raise QubitCapError("superoperator too large to materialise")
        if self._kraus is None:
            d = self.dim
            p = self.depolarizing_rate
            v = np.eye(d, dtype=complex).reshape(-1)
            s = (1 - p) * np.eye(d * d, dtype=complex) + p * np.outer(v, v) / d
        else:
            s = sum(np.kron(k, k.conj()) for k in self._kraus)
        s.setflags(write=False)
        return s

    @cached_property
    def adjoint_superoperator(self) -> np.ndarray:
        """Heisenberg-picture map M -> sum K^dag M K in the same vectorisation."""
        a = np.ascontiguousarray(self.superoperator.conj().T)
        a.setflags(write=False)
        return a

    @classmethod
    def from_superoperator(cls, sop: np.ndarray, label: str = "kraus", tol: float = 1e-12) -> QuantumChannel:
        """Minimal Kraus set from the Choi matrix of a superoperator."""
        return _kraus_from_superoperator(sop, label, tol)[0]

    @classmethod
    def identity(cls, num_qubits: int) -> QuantumChannel:
        return cls([np.eye(1 << num_qubits, dtype=complex)], label="identity",
                   config={"kind": "pauli", "qubits": num_qubits, "rate": 0.0, "coefficients": {}})

    def compose(self, other: QuantumChannel) -> QuantumChannel:
        """Channel applying ``other`` first, then ``self``."""
        if other.num_qubits != self.num_qubits:
            raise InvalidChannelError("cannot compose channels of different size")
        return QuantumChannel.from_superoperator(self.superoperator @ other.superoperator,
                                                 label=f"{self.label}*{other.label}")

    def tensor(self, other: QuantumChannel) -> QuantumChannel:
        ks = [np.kron(a, b) for a in self.kraus for b in other.kraus]
        return QuantumChannel(ks, validate=False, label=f"{self.label}(x){other.label}")

    def apply(self, rho, targets: Sequence[int] | None = None) -> DensityMatrix:
        return apply_channel(self, rho, list(range(self.num_qubits)) if targets is None else targets)

    def to_config(self) -> dict:
        return dict(self.config)

    def __repr__(self) -> str:
        return f"QuantumChannel({self.label}, qubits={self.num_qubits})"


def _kraus_from_superoperator(sop: np.ndarray, label: str, tol: float = 1e-12) -> tuple[QuantumChannel, np.ndarray]:
    choi = superop_to_choi(sop)
    d = int(round(np.sqrt(choi.shape[0])))
    w, v = np.linalg.eigh((choi + choi.conj().T) / 2)
    if w[0] < -1e-8:
        raise InvalidChannelError(f"superoperator is not completely positive (Choi eigenvalue {w[0]:.3e})")
    ks = [np.sqrt(lam) * v[:, i].reshape(d, d) for i, lam in enumerate(w) if lam > tol]
    return QuantumChannel(ks, label=label), w


def superop_to_choi(sop: np.ndarray) -> np.ndarray:
    d2 = sop.shape[0]
    d = int(round(np.sqrt(d2)))
    return sop.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d2, d2)


def check_channel(ch: QuantumChannel) -> ChannelReport:
    if ch._kraus is None:
        return ChannelReport(True, True, 0.0, 0.0)
    d = ch.dim
    eye = np.eye(d)
    tp = sum(k.conj().T @ k for k in ch.kraus)
    un = sum(k @ k.conj().T for k in ch.kraus)
    r_tp = float(np.max(np.abs(tp - eye)))
    r_un = float(np.max(np.abs(un - eye)))
    return ChannelReport(r_tp < CPTP_ATOL, r_un < CPTP_ATOL, r_tp, r_un)


# --- constructors -------------------------------------------------------------------

@dataclass(frozen=True)
class PauliNoiseSpec:
    num_qubits: int
    pauli_rate: float
    coefficients: Mapping[str, float]

    def __post_init__(self):
        if not 0 <= self.pauli_rate <= 1:
            raise InvalidChannelError(f"Pauli rate {self.pauli_rate} outside [0, 1]")
        for lab, w in self.coefficients.items():
            if len(lab) != self.num_qubits or set(lab) <= {"I"}:
                raise InvalidChannelError(f"invalid Pauli label {lab!r} for {self.num_qubits} qubits")
            if w < 0:
                raise InvalidChannelError("Pauli coefficients must be non-negative")
        total = sum(self.coefficients.values())
        if self.pauli_rate > 0 and abs(total - 1) > 1e-12:
            raise InvalidChannelError(f"Pauli coefficients sum to {total!r}, expected 1")

    def with_rate(self, rate: float) -> PauliNoiseSpec:
        return PauliNoiseSpec(self.num_qubits, rate, self.coefficients)


def random_pauli_spec(num_qubits: int, rate: float, rng: np.random.Generator) -> PauliNoiseSpec:
    """Pauli spec with coefficients drawn uniformly from the probability simplex."""
    labels = pauli_labels(num_qubits)
    w = rng.exponential(size=len(labels))
    w = w / w.sum()
    coeffs = dict(zip(labels, (float(x) for x in w)))
    # Re-normalise in float so the sum check holds to the last ulp.
    coeffs[labels[-1]] = 1.0 - sum(coeffs[lab] for lab in labels[:-1])
    return PauliNoiseSpec(num_qubits, rate, coeffs)


def make_pauli_channel(spec: PauliNoiseSpec) -> QuantumChannel:
    d = 1 << spec.num_qubits
    ks = [np.sqrt(1 - spec.pauli_rate) * np.eye(d, dtype=complex)]
    if spec.pauli_rate > 0:
        ks += [np.sqrt(spec.pauli_rate * w) * pauli_matrix(lab)
               for lab, w in spec.coefficients.items() if w > 0]
    cfg = {"kind": "pauli", "qubits": spec.num_qubits, "rate": spec.pauli_rate,
           "coefficients": dict(spec.coefficients)}
    return QuantumChannel(ks, label=f"pauli{spec.num_qubits}({spec.pauli_rate:.3g})", config=cfg)


def make_depolarizing(m: int, rate: float) -> QuantumChannel:
    """(1 - rate) rho + rate Tr[rho] I / 2^m, through the uniform Pauli Kraus set."""
    if not 0 <= rate <= 1:
        raise InvalidChannelError(f"depolarizing rate {rate} outside [0, 1]")
    cfg = {"kind": "depolarizing", "qubits": m, "rate": rate}
    label = f"depol{m}({rate:.3g})"
    if m > 3:
        return QuantumChannel(None, label=label, config=cfg, depolarizing_rate=rate, num_qubits=m)
    d = 1 << m
    labels = pauli_labels(m, include_identity=True)
    # I/d = (1/d^2) sum_P P rho P, so the identity picks up weight 1 - rate + rate/d^2.
    w = [1 - rate + rate / d**2] + [rate / d**2] * (len(labels) - 1)
    ks = [np.sqrt(wi) * pauli_matrix(lab) for wi, lab in zip(w, labels) if wi > 0]
    return QuantumChannel(ks, label=label, config=cfg, depolarizing_rate=rate)


def make_damping(kind: str, rate: float) -> QuantumChannel:
    if not 0 <= rate <= 1:
        raise InvalidChannelError(f"damping rate {rate} outside [0, 1]")
    e0 = np.array([[1, 0], [0, np.sqrt(1 - rate)]], dtype=complex)
    if kind == "phase":
        e = np.array([[0, 0], [0, np.sqrt(rate)]], dtype=complex)
    elif kind == "amplitude":
        e = np.array([[0, np.sqrt(rate)], [0, 0]], dtype=complex)
    else:
        raise InvalidChannelError(f"unknown damping kind {kind!r}")
    return QuantumChannel([e0, e], label=f"{kind}({rate:.3g})",
                          config={"kind": f"{kind}-damping", "qubits": 1, "rate": rate})


def _local_power(ch: QuantumChannel, m: int) -> np.ndarray:
    s = np.ones((1, 1), dtype=complex)
    for _ in range(m):
        s = _kron_superop(s, ch.superoperator)
    return s


def _kron_superop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of the tensor product of two channels (row-major vec)."""
    da = int(round(np.sqrt(a.shape[0])))
    db = int(round(np.sqrt(b.shape[0])))
    a4 = a.reshape(da, da, da, da)
    b4 = b.reshape(db, db, db, db)
    s = np.einsum("ijkl,mnop->imjnkolp", a4, b4)
    d = da * db
    return s.reshape(d * d, d * d)


def composite_gate_noise(m: int, level: float) -> QuantumChannel:
    """m-qubit depolarizing, then per-qubit phase damping, then per-qubit amplitude damping."""
    eps_m = depolarizing_rate_for(m, level)
    s = make_depolarizing(m, eps_m).superoperator
    s = _local_power(make_damping("phase", level), m) @ s
    s = _local_power(make_damping("amplitude", level), m) @ s
    ch = QuantumChannel.from_superoperator(s, label=f"composite{m}({level:.3g})")
    ch.config = {"kind": "composite", "qubits": m, "rate": level}
    return ch


def apply_channel(ch: QuantumChannel, rho, targets: Sequence[int]) -> DensityMatrix:
    m = as_array(rho)
    n = num_qubits_of(m.shape[0])
    targets = list(targets)
    if len(targets) != ch.num_qubits:
        raise InvalidChannelError(f"{ch.num_qubits}-qubit channel given {len(targets)} targets")
    if len(set(targets)) != len(targets) or any(q < 0 or q >= n for q in targets):
        raise InvalidChannelError(f"targets {targets} invalid for {n} qubits")
    t = apply_channel_tensor(m.reshape((2,) * (2 * n)), ch, targets, n)
    return DensityMatrix.unchecked(np.ascontiguousarray(t).reshape(m.shape))


def apply_channel_tensor(t: np.ndarray, ch: QuantumChannel, targets: Sequence[int], n: int,
                         adjoint: bool = False) -> np.ndarray:
    """Apply a channel (or its adjoint) to a (2,)*2n operator tensor."""
    m = ch.num_qubits
    if ch.depolarizing_rate is not None and m > 3:
        return _depolarize_tensor(t, ch.depolarizing_rate, targets, n)
    if m <= 3:
        sop = ch.adjoint_superoperator if adjoint else ch.superoperator
        return apply_superoperator(t, sop, targets, n)
    from .tensor import apply_unitary
    out = np.zeros_like(t)
    for k in ch.kraus:
        out = out + apply_unitary(t, k.conj().T if adjoint else k, targets, n)
    return out


def _depolarize_tensor(t: np.ndarray, p: float, targets: Sequence[int], n: int) -> np.ndarray:
    """(1-p) X + p Tr_T[X] (x) I_T / 2^m, which is also its own adjoint.

    Trailing axes beyond the first 2n are treated as a batch.
    """
    targets = list(targets)
    idx = list(range(2 * n))
    for q in targets:
        idx[q + n] = q
    kept = [i for i in range(2 * n) if i not in targets and i - n not in targets]
    reduced = np.einsum(t, idx + [...], kept + [...])
    operands = [reduced, kept + [...]]
    for q in targets:
        operands += [np.eye(2, dtype=complex), [q, q + n]]
    mixed = np.einsum(*operands, list(range(2 * n)) + [...])
    return (1 - p) * t + p * mixed / (1 << len(targets))


# --- noise levels --------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseLevelConfig:
    noise_level: float
    p2: float
    p3: float
    model_kind: str = "stochastic-pauli"

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown noise model kind {self.model_kind!r}")


def pauli_rate_2q(level: float) -> float:
    return (level / (1 - 1 / 4)) * (1 - 1 / 16)


def pauli_rate_cswap(p2: float) -> float:
    return 1 - (1 - p2) ** 6


def depolarizing_rate_for(m: int, level: float) -> float:
    """Depolarizing mixing rate for an m-qubit gate, derived like the Pauli rates."""
    e2 = pauli_rate_2q(level)
    if m <= 2:
        return e2
    if m == 3:
        return pauli_rate_cswap(e2)
    raise InvalidChannelError(f"no rate convention for {m}-qubit gates")


def rates_from_noise_level(level: float, model_kind: str = "stochastic-pauli") -> NoiseLevelConfig:
    if not 0 <= level <= 0.75:
        raise ConfigError(f"noise level {level} outside [0, 0.75]")
    p2 = pauli_rate_2q(level)
    return NoiseLevelConfig(level, p2, pauli_rate_cswap(p2), model_kind)


@dataclass(frozen=True, eq=False)
class GateNoiseModel:
    """Noise attached after every multi-qubit gate of a circuit.

    ``channels`` maps gate arity to the channel placed on the gate targets.
    With ``scope == "global"`` a single depolarizing channel of rate ``level``
    acts on the whole register after each multi-qubit gate instead.
    """

    config: NoiseLevelConfig
    channels: Mapping[int, QuantumChannel] = field(default_factory=dict)
    pauli_specs: Mapping[int, PauliNoiseSpec] = field(default_factory=dict)
    scope: str = "gate"

    @property
    def level(self) -> float:
        return self.config.noise_level

    @property
    def kind(self) -> str:
        return self.config.model_kind

    @classmethod
    def stochastic_pauli(cls, level: float, rng: np.random.Generator) -> GateNoiseModel:
        """Random Pauli coefficients, drawn independently for 2- and 3-qubit gates."""
        cfg = rates_from_noise_level(level, "stochastic-pauli")
        specs = {2: random_pauli_spec(2, cfg.p2, rng), 3: random_pauli_spec(3, cfg.p3, rng)}
        return cls.from_pauli_specs(cfg, specs)

    @classmethod
    def from_pauli_specs(cls, cfg: NoiseLevelConfig, specs: Mapping[int, PauliNoiseSpec]) -> GateNoiseModel:
        return cls(cfg, {m: make_pauli_channel(s) for m, s in specs.items()}, dict(specs))

    @classmethod
    def composite(cls, level: float) -> GateNoiseModel:
        cfg = rates_from_noise_level(level, "composite-depol-damping")
        return cls(cfg, {m: composite_gate_noise(m, level) for m in (2, 3)})

    @classmethod
    def depolarizing(cls, level: float) -> GateNoiseModel:
        cfg = rates_from_noise_level(level, "depolarizing")
        return cls(cfg, {m: make_depolarizing(m, depolarizing_rate_for(m, level)) for m in (2, 3)})

    @classmethod
    def global_depolarizing(cls, rate: float) -> GateNoiseModel:
        if not 0 <= rate <= 1:
            raise ConfigError(f"depolarizing rate {rate} outside [0, 1]")
        cfg = NoiseLevelConfig(rate, rate, rate, "global-depolarizing")
        return cls(cfg, {}, {}, scope="global")

    def channel_for(self, arity: int, num_qubits: int | None = None) -> QuantumChannel | None:
        if self.scope == "global":
            if num_qubits is None:
                raise ConfigError("global noise needs the register size")
            return make_depolarizing(num_qubits, self.level)
        if arity < 2:
            return None
        if arity not in self.channels:
            raise ConfigError(f"noise model has no channel for {arity}-qubit gates")
        return self.channels[arity]

    def scaled(self, factor: float) -> GateNoiseModel:
        """Same model (same Pauli coefficients) at noise level ``factor * level``."""
        level = self.level * factor
        if self.scope == "global":
            return GateNoiseModel.global_depolarizing(level)
        if self.kind == "stochastic-pauli":
            cfg = rates_from_noise_level(level, self.kind)
            rates = {2: cfg.p2, 3: cfg.p3}
            return GateNoiseModel.from_pauli_specs(
                cfg, {m: s.with_rate(rates[m]) for m, s in self.pauli_specs.items()})
        if self.kind == "composite-depol-damping":
            return GateNoiseModel.composite(level)
        return GateNoiseModel.depolarizing(level)


def channel_from_config(cfg: Mapping) -> QuantumChannel:
    """Inverse of ``QuantumChannel.to_config`` for the named channel kinds."""
    try:
        kind = cfg["kind"]
        m = int(cfg.get("qubits", 1))
        rate = float(cfg.get("rate", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed channel config {cfg!r}") from exc
    if kind == "pauli":
        coeffs = {str(k): float(v) for k, v in (cfg.get("coefficients") or {}).items()}
        if rate == 0.0 and not coeffs:
            return QuantumChannel.identity(m)
        return make_pauli_channel(PauliNoiseSpec(m, rate, coeffs))
    if kind == "depolarizing":
        return make_depolarizing(m, rate)
    if kind in ("phase-damping", "amplitude-damping"):
        return make_damping(kind.split("-")[0], rate)
    if kind == "composite":
        return composite_gate_noise(m, rate)
    raise ConfigError(f"channel kind {kind!r} cannot be rebuilt from config")


# --- effective noise ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EffectiveNoise:
    channel: QuantumChannel
    mixture_weights: tuple[float, ...]

    @property
    def superoperator(self) -> np.ndarray:
        return self.channel.superoperator


def unitary_superop(u: np.ndarray) -> np.ndarray:
    return np.kron(u, u.conj())


def effective_noise_of(circuit) -> EffectiveNoise:
    """Fold every layer's noise to the end of the circuit.

    The returned channel is S_noisy S_ideal^dag, so the noisy circuit equals the
    ideal circuit followed by it. Since S_ideal is unitary this is the same as
    conjugating each layer's noise by the ideal layers after it.
    """
    n = circuit.num_qubits
    if n > EFFECTIVE_NOISE_MAX_QUBITS:
        raise QubitCapError(
            f"effective noise needs dense {4**n}x{4**n} superoperators; capped at "
            f"{EFFECTIVE_NOISE_MAX_QUBITS} qubits")
    d, d2 = 1 << n, 1 << (2 * n)
    from .tensor import apply_unitary
    # noisy superoperator, built by pushing every basis matrix through the layers at once
    t = np.eye(d2, dtype=complex).reshape((2,) * (2 * n) + (d2,))
    ideal = np.eye(d, dtype=complex)
    for layer in circuit.layers:
        for g in layer.gates:
            t = apply_unitary(t, g.matrix, g.targets, n)
        for op in layer.noise:
            t = apply_channel_tensor(t, op.channel, op.targets, n)
        ideal = layer.unitary(n) @ ideal
    eff = t.reshape(d2, d2) @ unitary_superop(ideal).conj().T
    ch, w = _kraus_from_superoperator(eff, "effective")
    w = w[::-1] / (1 << n)
    return EffectiveNoise(ch, tuple(float(x) for x in w if x > 1e-12))


def marginal_channels(sop: np.ndarray, split: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Superoperators of E^R(s) = Tr_D E(s (x) I/d_D) and E^D(t) = Tr_R E(I/d_R (x) t).

    R is qubits ``0..split-1`` and D the remaining ``n - split`` qubits.
    """
    dr, dd = 1 << split, 1 << (n - split)
    s8 = sop.reshape(dr, dd, dr, dd, dr, dd, dr, dd)
    # output (a,b),(a',b'); input (c,e),(c',e')
    er = np.einsum("abxbcede->axcd", s8) / dd
    ed = np.einsum("abaxcecf->bxef", s8) / dr
    return er.reshape(dr * dr, dr * dr), ed.reshape(dd * dd, dd * dd)


def factorization_residual(noise, split: int = 1) -> float:
    """Max deviation between a channel and the product of its R/D marginals."""
    sop = noise.superoperator if hasattr(noise, "superoperator") else np.asarray(noise)
    n = num_qubits_of(int(round(np.sqrt(sop.shape[0]))))
    er, ed = marginal_channels(sop, split, n)
    return float(np.max(np.abs(sop - _kron_superop(er, ed))))


def separable_unitary_mixture(weights: Sequence[float], pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> QuantumChannel:
    """Channel sum_i c_i (K_i^R (x) K_i^D) rho (K_i^R (x) K_i^D)^dag from unitary pairs."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise InvalidChannelError("mixture weights must be a probability vector")
    ks = [np.sqrt(c) * np.kron(kr, kd) for c, (kr, kd) in zip(w, pairs) if c > 0]
    return QuantumChannel(ks, label="separable-mixture")
