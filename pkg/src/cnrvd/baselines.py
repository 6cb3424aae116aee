"""Comparison estimators: ZNE on noisy VD, shadow distillation, unmitigated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ExtrapolationDomainError
from .estimators import (EstimatorReport, ShotSampler, _as_pauli, _check_denominator, _default_sampler,
                         _identity, as_backend, delta_method)
from .circuits import vd_data_state
from .pauli import BASIS_ROTATIONS, X, PauliString
from .readout import IBU_ITERATIONS, TransferMatrix, apply_readout, ibu_unfold
from .tensor import as_array, kron_all, num_qubits_of

# --- zero-noise extrapolation ------------------------------------------------------------


@dataclass(frozen=True)
class ZneConfig:
    lam: float = 3.0
    amplification_efficiency: float = 0.94

    def __post_init__(self):
        if self.lam <= 1:
            raise ConfigError("ZNE amplification factor must exceed 1")

    @property
    def achieved_factor(self) -> float:
        """Noise actually reached: a fraction of the requested (lam - 1) stretch."""
        return 1 + (self.lam - 1) * self.amplification_efficiency


def exponential_extrapolate(v1: float, v2: float, lam: float) -> float:
    """Two-point exponential extrapolation (v1^lam / v2)^(1/(lam-1)).

    Values of one common sign are extrapolated in magnitude and keep that sign;
    opposite signs or a zero have no exponential through them.
    """
    if v1 == 0 or v2 == 0 or np.sign(v1) != np.sign(v2):
        raise ExtrapolationDomainError(f"cannot extrapolate exponentially through {v1:.3e} and {v2:.3e}")
    sign = np.sign(v1)
    return float(sign * (abs(v1) ** lam / abs(v2)) ** (1 / (lam - 1)))


def zne_vd_estimate(rho, o, n: int = 2, noise=None, config: ZneConfig = ZneConfig(),
                    sampler: ShotSampler | None = None) -> EstimatorReport:
    """Numerator and denominator of noisy VD extrapolated separately, then ratioed.

    ``noise`` is a gate-noise model or a backend; the amplified run reuses the
    backend's twirl instances.
    """
    r = as_array(rho)
    N = num_qubits_of(r.shape[0])
    o = _as_pauli(o, N)
    base = as_backend(n, N, noise)
    amp = base.scaled(config.achieved_factor)
    sampler = _default_sampler(sampler)
    data = vd_data_state(r, n)
    ident = _identity(N)
    names = ["p0(rho,O)", "p0(rho,I)", "p0(rho,O;amp)", "p0(rho,I;amp)"]
    alloc = sampler.allocate(names)
    means, vars_ = {}, {}
    for name, be, obs in zip(names, (base, base, amp, amp), (o, ident, o, ident)):
        probs = be.p0(obs, "rho", data)
        means[name], vars_[name] = sampler.measure((be.uid, obs.letters, "rho"), probs, alloc[name])
    x = [means[k] for k in names]

    def f(p):
        num = exponential_extrapolate(2 * p[0] - 1, 2 * p[2] - 1, config.lam)
        den = exponential_extrapolate(2 * p[1] - 1, 2 * p[3] - 1, config.lam)
        _check_denominator(den, "extrapolated denominator")
        return num / den

    value = f(x)
    try:
        var = delta_method(f, x, [vars_[k] for k in names])
    except ExtrapolationDomainError:
        var = float("nan")
    comps = dict(means)
    return EstimatorReport("zne-vd", value, var, int(sum(alloc.values())), sampler.mode, comps, sampler.seed)


# --- shadows -----------------------------------------------------------------------------

# The six single-qubit basis-measurement Cliffords: (basis letter, extra X flip).
_BASIS_CLIFFORDS = tuple((b, f) for b in "XYZ" for f in (0, 1))


def _clifford_matrix(idx: int) -> np.ndarray:
    b, f = _BASIS_CLIFFORDS[idx]
    v = BASIS_ROTATIONS[b]
    return X @ v if f else v


_CLIFFORD_MATS = tuple(_clifford_matrix(i) for i in range(6))
# _SNAPSHOT[u, b] = 3 u^dag |b><b| u - I
_SNAPSHOT = np.array([[3 * np.outer(u[b].conj(), u[b]) - np.eye(2) for b in (0, 1)] for u in _CLIFFORD_MATS])


@dataclass(frozen=True)
class ShadowConfig:
    n_u: int
    n_s: int | None = None

    def __post_init__(self):
        if self.n_u < 2:
            raise ConfigError("shadow distillation needs at least two unitaries")
        if self.n_s is not None and self.n_s < 1:
            raise ConfigError("shots per unitary must be >= 1")

    @classmethod
    def for_total_shots(cls, total_shots: int) -> ShadowConfig:
        """10 shots per unitary up to 1e4 total shots, 50 beyond."""
        n_s = 10 if total_shots <= 10**4 else 50
        return cls(max(2, total_shots // n_s), n_s)


@dataclass(frozen=True)
class Snapshot:
    cliffords: tuple[int, ...]
    bits: tuple[int, ...]

    def reconstruction(self) -> np.ndarray:
        return kron_all([_SNAPSHOT[u, b] for u, b in zip(self.cliffords, self.bits)])


def _rotated_distribution(rho: np.ndarray, cliffords, n: int) -> np.ndarray:
    u = kron_all([_CLIFFORD_MATS[c] for c in cliffords])
    p = np.real(np.einsum("ij,jk,ik->i", u, rho, u.conj()))
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def shadow_snapshot(rho, rng: np.random.Generator, cliffords=None) -> Snapshot:
    """One randomized measurement: uniform basis Clifford per qubit, one outcome."""
    m = as_array(rho)
    n = num_qubits_of(m.shape[0])
    cl = tuple(int(c) for c in (rng.integers(0, 6, size=n) if cliffords is None else cliffords))
    p = _rotated_distribution(m, cl, n)
    x = min(int(np.searchsorted(np.cumsum(p), rng.random(), side="right")), len(p) - 1)
    bits = tuple((x >> (n - 1 - q)) & 1 for q in range(n))
    return Snapshot(cl, bits)


def _shadow_average(q: np.ndarray, cliffords, n: int) -> np.ndarray:
    """sum_b q_b (x)_j (3 u_j^dag |b_j><b_j| u_j - I) for a batch of unitaries.

    ``q`` has shape (K, 2^n) and ``cliffords`` shape (K, n); returns (K, 2^n, 2^n).
    """
    k = q.shape[0]
    d = 1 << n
    t = q.reshape((k,) + (2,) * n)
    # Contract one qubit at a time: bit axis -> (row, col) pair.
    for j in range(n):
        ops = _SNAPSHOT[cliffords[:, j]]  # (K, 2 bits, 2, 2)
        t = np.einsum("kb...,kbrc->k...rc", t, ops)
    # axes now (K, r0, c0, r1, c1, ...); reorder to (K, r0..r_{n-1}, c0..c_{n-1})
    perm = [0] + [1 + 2 * j for j in range(n)] + [2 + 2 * j for j in range(n)]
    return t.transpose(perm).reshape(k, d, d)


def _rotated_distributions(rho: np.ndarray, cliffords: np.ndarray, n: int) -> np.ndarray:
    """diag(U rho U^dag) for a batch of product unitaries, shape (K, 2^n)."""
    k = cliffords.shape[0]
    t = np.broadcast_to(rho.reshape((2,) * (2 * n)), (k,) + (2,) * (2 * n))
    mats = np.array(_CLIFFORD_MATS)
    for j in range(n):
        u = mats[cliffords[:, j]]  # (K, 2, 2)
        t = np.moveaxis(np.einsum("kab,kb...->ka...", u, np.moveaxis(t, 1 + j, 1)), 1, 1 + j)
        t = np.moveaxis(np.einsum("kab,kb...->ka...", u.conj(), np.moveaxis(t, 1 + n + j, 1)), 1, 1 + n + j)
    d = 1 << n
    p = np.real(np.einsum("kii->ki", t.reshape(k, d, d)))
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=1, keepdims=True)


def ibu_unfold_batch(noisy: np.ndarray, lam: np.ndarray, iterations: int) -> np.ndarray:
    """Row-wise IBU, same update as ``ibu_unfold``."""
    from .readout import IBU_FLOOR
    m = np.full(noisy.shape, 1.0 / noisy.shape[1])
    for _ in range(iterations):
        pred = np.maximum(m @ lam.T, IBU_FLOOR)
        m = m * ((noisy / pred) @ lam)
        m = m / m.sum(axis=1, keepdims=True)
    return m


_SD_CHUNK = 1024


def sd_estimate(rho, o, config: ShadowConfig, sampler: ShotSampler | None = None,
                readout: TransferMatrix | None = None, ibu_iterations: int = IBU_ITERATIONS) -> EstimatorReport:
    """Shadow distillation: U-statistic estimates of Tr[rho^2 O] and Tr[rho^2].

    For each random unitary the outcome histogram (after optional readout
    noise and IBU with the factored estimate) gives an averaged snapshot
    r_i; the pair sum over i != i' of Tr[r_i r_i' O] is Tr[S S O] - sum_i
    Tr[r_i r_i O] with S = sum_i r_i. ``config.n_s=None`` uses exact
    outcome distributions instead of shots.
    """
    m = as_array(rho)
    n = num_qubits_of(m.shape[0])
    o = _as_pauli(o, n)
    sampler = _default_sampler(sampler)
    rng = sampler.rng
    tpn = readout.tpn().matrix if readout is not None else None
    om = o.matrix
    total = np.zeros_like(m)
    diag_num = 0.0
    diag_den = 0.0
    cliffords = rng.integers(0, 6, size=(config.n_u, n))
    for start in range(0, config.n_u, _SD_CHUNK):
        cl = cliffords[start:start + _SD_CHUNK]
        p = _rotated_distributions(m, cl, n)
        if readout is not None:
            p = p @ readout.matrix.T
        if config.n_s is not None:
            q = np.array([rng.multinomial(config.n_s, row / row.sum()) for row in p]) / config.n_s
        else:
            q = p
        if tpn is not None:
            q = ibu_unfold_batch(q, tpn, ibu_iterations)
        r = _shadow_average(q, cl, n)
        total += r.sum(axis=0)
        rr = r @ r
        diag_num += float(np.real(np.einsum("kij,ji->", rr, om)))
        diag_den += float(np.real(np.einsum("kii->", rr)))
    pairs = config.n_u * (config.n_u - 1)
    ss = total @ total
    num = (np.real(np.einsum("ij,ji->", ss, om)) - diag_num) / pairs
    den = (np.real(np.trace(ss)) - diag_den) / pairs
    _check_denominator(den, "shadow estimate of Tr[rho^2]")
    shots = config.n_u * (config.n_s or 0)
    mode = "sampled" if config.n_s is not None else "exact-probability"
    return EstimatorReport("sd", float(num / den), float("nan") if config.n_s else 0.0, shots, mode,
                           {"num": float(num), "den": float(den), "n_u": config.n_u,
                            "n_s": config.n_s or 0}, sampler.seed)


# --- unmitigated ---------------------------------------------------------------------------

def measurement_distribution(rho, o: PauliString) -> np.ndarray:
    """Ideal outcome distribution after rotating each support qubit to the Z basis."""
    m = as_array(rho)
    v = kron_all([BASIS_ROTATIONS[c] for c in o.letters])
    p = np.real(np.einsum("ij,jk,ik->i", v, m, v.conj()))
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def parity_expectation(dist: np.ndarray, o: PauliString) -> float:
    n = o.num_qubits
    x = np.arange(len(dist))
    parity = np.zeros(len(dist), dtype=int)
    for q in o.support:
        parity ^= (x >> (n - 1 - q)) & 1
    return float(np.sum(dist * (1 - 2 * parity)))


def unmitigated_estimate(rho, o, readout: TransferMatrix | None = None, sampler: ShotSampler | None = None,
                         ibu_iterations: int = IBU_ITERATIONS) -> EstimatorReport:
    """<O> from basis-rotated measurements, readout-unfolded with the factored model."""
    m = as_array(rho)
    n = num_qubits_of(m.shape[0])
    o = _as_pauli(o, n)
    sampler = _default_sampler(sampler)
    alloc = sampler.allocate(["measure(rho,O)"])
    p = apply_readout(measurement_distribution(m, o), readout)
    if sampler.exact:
        q = p
    else:
        q = sampler.rng.multinomial(alloc["measure(rho,O)"], p / p.sum()) / alloc["measure(rho,O)"]
    if readout is not None:
        q = ibu_unfold(q, readout.tpn(), ibu_iterations)
    value = parity_expectation(q, o)
    var = 0.0 if sampler.exact else (1 - value**2) / alloc["measure(rho,O)"]
    return EstimatorReport("unmit", value, var, int(sum(alloc.values())), sampler.mode,
                           {"<O>": value}, sampler.seed)
