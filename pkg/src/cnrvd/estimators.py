"""Noisy-VD and CNR-VD estimators on top of exact ancilla probabilities.

Every estimator is a rational function of a few ancilla probabilities
p0(input, O). A ``VDBackend`` owns the (possibly twirled) circuits of one
noise realisation and returns exact per-instance probabilities; a
``ShotSampler`` turns them into finite-shot estimates, or passes them through
unchanged in exact mode.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .channels import NoiseLevelConfig
from .circuits import Circuit, ancilla_effect, build_vd_circuit, trace_product, vd_data_state
from .errors import CalibrationDegenerateError, ConfigError, DegenerateDenominatorError
from .pauli import PauliString, eigenstate
from .tensor import as_array, ket_to_dm, kron_all
from .twirling import TwirlPlan

DENOM_ATOL = 1e-9
EXACT = "exact-probability"
SAMPLED = "sampled"

_backend_ids = itertools.count()


# --- shots ---------------------------------------------------------------------------

class ShotSampler:
    """Finite-shot layer over exact probabilities.

    ``total_shots=None`` selects exact mode. Otherwise shots are split equally
    over the circuit instances an estimator requests (``per_circuit=False``),
    or every circuit instance gets ``total_shots`` shots (``per_circuit=True``).
    Repeated requests for the same instance and shot count inside one sampler
    reuse the same draw, so estimators evaluated on one sampler share data.
    """

    def __init__(self, total_shots: int | None = None, seed=None, per_circuit: bool = False,
                 rng: np.random.Generator | None = None, share_draws: bool = True):
        if total_shots is not None and total_shots < 1:
            raise ConfigError("total_shots must be >= 1")
        self.total_shots = total_shots
        self.seed = seed
        self.per_circuit = per_circuit
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.share_draws = share_draws
        self.allocation: dict[str, int] = {}
        self._memo: dict = {}

    @property
    def exact(self) -> bool:
        return self.total_shots is None

    @property
    def mode(self) -> str:
        return EXACT if self.exact else SAMPLED

    def allocate(self, names: Sequence[str]) -> dict[str, int]:
        """Shots per circuit instance; in split mode they sum to total_shots."""
        if self.exact:
            alloc = {name: 0 for name in names}
        elif self.per_circuit:
            alloc = {name: self.total_shots for name in names}
        else:
            if self.total_shots < len(names):
                raise ConfigError(f"{self.total_shots} shots cannot cover {len(names)} circuit instances")
            base, extra = divmod(self.total_shots, len(names))
            alloc = {name: base + (1 if i < extra else 0) for i, name in enumerate(names)}
        self.allocation = alloc
        return alloc

    def draw(self, p: float, shots: int) -> float:
        return sample_probability(p, shots, self.rng)

    def measure(self, key, probs: Sequence[float], shots: int) -> tuple[float, float]:
        """Average of per-instance estimates and its variance (exact mode: no noise)."""
        probs = np.clip(np.asarray(probs, dtype=float), 0.0, 1.0)
        if self.exact:
            return float(np.mean(probs)), 0.0
        memo_key = (key, shots)
        if self.share_draws and memo_key in self._memo:
            return self._memo[memo_key]
        r = len(probs)
        if shots < r:
            raise ConfigError(f"{shots} shots cannot cover {r} twirl instances")
        base, extra = divmod(shots, r)
        per = [base + (1 if i < extra else 0) for i in range(r)]
        ests = np.array([self.draw(p, s) for p, s in zip(probs, per)])
        var = float(np.sum(ests * (1 - ests) / np.array(per))) / r**2
        out = (float(np.mean(ests)), var)
        if self.share_draws:
            self._memo[memo_key] = out
        return out


def sample_probability(p: float, shots: int, rng: np.random.Generator) -> float:
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    return float(rng.binomial(int(shots), min(max(p, 0.0), 1.0))) / shots


def sample_p0(c: Circuit, state, shots: int, rng: np.random.Generator) -> float:
    """Binomial estimate of the ancilla-0 probability of ``c`` on a full input state."""
    from .circuits import p0_ancilla
    return sample_probability(p0_ancilla(c, state), shots, rng)


# --- calibration states ---------------------------------------------------------------

def _orthogonal(letter: str) -> np.ndarray:
    return eigenstate("Z" if letter == "I" else letter, -1)


def _plus(letter: str) -> np.ndarray:
    return eigenstate("Z" if letter == "I" else letter, +1)


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    observable: PauliString
    s_plus: np.ndarray
    s_minus: np.ndarray | None = None
    g0: np.ndarray | None = None
    g_half: np.ndarray | None = None
    modified_qubit: int = 0

    def __post_init__(self):
        o = self.observable.matrix
        if np.max(np.abs(o @ self.s_plus - self.s_plus)) > 1e-12:
            raise ValueError("s_plus is not a +1 eigenstate of the observable")
        if self.s_minus is not None and np.max(np.abs(o @ self.s_minus + self.s_minus)) > 1e-12:
            raise ValueError("s_minus is not a -1 eigenstate of the observable")
        if self.g0 is not None and abs(np.vdot(self.s_plus, self.g0)) ** 2 > 1e-12:
            raise ValueError("g0 is not orthogonal to s_plus")
        if self.g_half is not None and abs(abs(np.vdot(self.s_plus, self.g_half)) ** 2 - 0.5) > 1e-12:
            raise ValueError("g_half does not have overlap 1/2 with s_plus")

    @property
    def complete(self) -> bool:
        return all(v is not None for v in (self.s_minus, self.g0, self.g_half))


def make_calibration_set(o: PauliString, need_general: bool = True) -> CalibrationSet:
    """Product eigenstates of O; the lowest support qubit (qubit 0 for O = I) is modified."""
    letters = o.letters
    plus = [_plus(c) for c in letters]
    s_plus = kron_all([v.reshape(-1, 1) for v in plus]).reshape(-1)
    if not need_general:
        return CalibrationSet(o, s_plus)
    q = o.support[0] if o.support else 0
    c = letters[q]

    def with_qubit(v: np.ndarray) -> np.ndarray:
        vs = list(plus)
        vs[q] = v
        return kron_all([x.reshape(-1, 1) for x in vs]).reshape(-1)

    s_minus = with_qubit(_orthogonal(c)) if not o.is_identity else None
    g0 = with_qubit(_orthogonal(c))
    g_half = with_qubit((_plus(c) + _orthogonal(c)) / np.sqrt(2))
    return CalibrationSet(o, s_plus, s_minus, g0, g_half, q)


# --- backend ---------------------------------------------------------------------------

class VDBackend:
    """Circuits of one noise realisation, with cached ancilla effects.

    ``noise`` is a GateNoiseModel (or NoiseLevelConfig, or None). A different
    circuit construction can be supplied as ``circuit_factory(observable) ->
    Circuit``. With a ``twirl`` plan each observable circuit is replaced by the
    plan's R compiled instances and every probability is returned per instance.
    """

    def __init__(self, n: int, N: int, noise=None, *, circuit_factory: Callable | None = None,
                 twirl: TwirlPlan | None = None, rng: np.random.Generator | None = None):
        self.n = n
        self.N = N
        if isinstance(noise, NoiseLevelConfig):
            from .circuits import _resolve_noise
            noise = _resolve_noise(noise, rng)
        self.noise = noise
        self.twirl = twirl
        self._factory = circuit_factory
        self._effects: dict[str, list[np.ndarray]] = {}
        self._p0: dict = {}
        self.uid = next(_backend_ids)

    def key(self) -> str:
        lvl = "none" if self.noise is None else f"{self.noise.kind}@{self.noise.level:g}"
        return f"n={self.n},N={self.N},{lvl},#{self.uid}"

    def circuit(self, o: PauliString) -> Circuit:
        if self._factory is not None:
            return self._factory(o)
        return build_vd_circuit(self.n, self.N, o, self.noise)

    def circuits(self, o: PauliString) -> list[Circuit]:
        c = self.circuit(o)
        return self.twirl.circuits_for(c) if self.twirl is not None else [c]

    @property
    def instances(self) -> int:
        return 1 if self.twirl is None else self.twirl.instances

    def effects(self, o: PauliString) -> list[np.ndarray]:
        if o.letters not in self._effects:
            self._effects[o.letters] = [ancilla_effect(c) for c in self.circuits(o)]
        return self._effects[o.letters]

    def p0(self, o: PauliString, name: str, data: np.ndarray) -> np.ndarray:
        """Exact p0 per twirl instance for the data-register input ``data``."""
        key = (o.letters, name)
        hit = self._p0.get(key)
        if hit is not None and hit[0] is data:
            return hit[1]
        vals = np.array([trace_product(e, data) for e in self.effects(o)])
        self._p0[key] = (data, vals)
        return vals

    def scaled(self, factor: float) -> VDBackend:
        """Same circuits and twirl instances with the noise level multiplied by ``factor``."""
        if self._factory is not None or self.noise is None:
            raise ConfigError("only gate-noise backends can be rescaled")
        return VDBackend(self.n, self.N, self.noise.scaled(factor), twirl=self.twirl)


def as_backend(n: int, N: int, noise) -> VDBackend:
    if isinstance(noise, VDBackend):
        if (noise.n, noise.N) != (n, N):
            raise ConfigError("backend built for a different VD shape")
        return noise
    return VDBackend(n, N, noise)


# --- reports -------------------------------------------------------------------------

@dataclass
class EstimatorReport:
    estimator: str
    value: float
    variance: float
    shots_used: int
    mode: str
    components: dict[str, float] = field(default_factory=dict)
    seed: object = None

    def __post_init__(self):
        if self.mode == EXACT:
            self.variance = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed"] = self.seed if isinstance(self.seed, (int, str, type(None))) else str(self.seed)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _identity(N: int) -> PauliString:
    return PauliString.identity(N)


def _as_pauli(o, N: int | None = None) -> PauliString:
    if isinstance(o, PauliString):
        return o
    if isinstance(o, str):
        return PauliString(o)
    if o is None and N is not None:
        return _identity(N)
    raise ConfigError(f"observable {o!r} is not a Pauli string")


class _Run:
    """Collect the probabilities one estimator needs and sample them once."""

    def __init__(self, backend: VDBackend, sampler: ShotSampler, requests: list[tuple[str, PauliString, str, np.ndarray]]):
        names = [r[0] for r in requests]
        self.alloc = sampler.allocate(names)
        self.mean: dict[str, float] = {}
        self.var: dict[str, float] = {}
        self.exact: dict[str, float] = {}
        for name, o, input_name, data in requests:
            probs = backend.p0(o, input_name, data)
            key = (backend.uid, o.letters, input_name)
            self.mean[name], self.var[name] = sampler.measure(key, probs, self.alloc[name])
            self.exact[name] = float(np.mean(probs))
        self.shots = int(sum(self.alloc.values()))


def delta_method(f: Callable[[np.ndarray], float], means: Sequence[float], variances: Sequence[float]) -> float:
    """First-order propagated variance with a central-difference gradient."""
    x = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    if not np.any(v > 0):
        return 0.0
    grad = np.zeros_like(x)
    for i in range(len(x)):
        h = 1e-6 * max(1.0, abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2 * h)
    return float(np.sum(grad**2 * v))


def variance_of_ratio(mean_a: float, var_a: float, mean_b: float, var_b: float) -> float:
    """Error-propagated variance of A/B for independent A and B."""
    if mean_b == 0:
        raise DegenerateDenominatorError("ratio variance undefined for a zero denominator")
    r2 = (mean_a / mean_b) ** 2
    term_b = var_b / mean_b**2
    if mean_a == 0:
        return var_a / mean_b**2
    return r2 * (var_a / mean_a**2 + term_b)


def variance_scaling_factor(o_vd_s: float) -> float:
    """Bound on Var[CNR-VD] / Var[VD] for calibration value O_VD(s) = o_vd_s."""
    if o_vd_s == 0:
        raise DegenerateDenominatorError("calibration value 0 makes the CNR-VD variance diverge")
    return (o_vd_s**2 + 1) / o_vd_s**4


def _check_denominator(value: float, what: str, err=DegenerateDenominatorError) -> None:
    if abs(value) < DENOM_ATOL:
        raise err(f"{what} = {value:.3e} is below {DENOM_ATOL:g}")


def _vd_ratio(p_num: float, p_den: float) -> float:
    return (2 * p_num - 1) / (2 * p_den - 1)


def _default_sampler(sampler: ShotSampler | None) -> ShotSampler:
    return sampler if sampler is not None else ShotSampler(None)


def vd_estimate(rho, o, n: int = 2, noise=None, sampler: ShotSampler | None = None) -> EstimatorReport:
    """(2 p0(rho, O) - 1) / (2 p0(rho, I) - 1) from the noisy O- and I-circuits."""
    r = as_array(rho)
    N = r.shape[0].bit_length() - 1
    o = _as_pauli(o, N)
    backend = as_backend(n, N, noise)
    sampler = _default_sampler(sampler)
    data = vd_data_state(r, n)
    ident = _identity(N)
    run = _Run(backend, sampler, [("p0(rho,O)", o, "rho", data), ("p0(rho,I)", ident, "rho", data)])
    a, b = run.mean["p0(rho,O)"], run.mean["p0(rho,I)"]
    _check_denominator(2 * b - 1, "VD denominator 2p0(rho,I)-1")
    value = _vd_ratio(a, b)
    var = variance_of_ratio(2 * a - 1, 4 * run.var["p0(rho,O)"], 2 * b - 1, 4 * run.var["p0(rho,I)"])
    return EstimatorReport("vd", value, var, run.shots, sampler.mode, dict(run.mean), sampler.seed)


@dataclass
class CalibrationRecord:
    """Calibration probabilities for one (noise realisation, observable, order).

    ``value`` is O_VD(s); it can be stored and reused for any input state as
    long as the circuit noise stays the same.
    """

    noise_key: str
    observable: str
    order: int
    value: float
    components: dict[str, float]
    variances: dict[str, float]
    mode: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> CalibrationRecord:
        return cls(**d)


def calibrate(o, n: int, N: int, noise=None, sampler: ShotSampler | None = None,
              calib: CalibrationSet | None = None) -> CalibrationRecord:
    """Run s^(x)n through the noisy O- and I-circuits and record O_VD(s)."""
    o = _as_pauli(o, N)
    backend = as_backend(n, N, noise)
    sampler = _default_sampler(sampler)
    calib = calib or make_calibration_set(o, need_general=False)
    s = ket_to_dm(calib.s_plus)
    data = vd_data_state(s, n)
    run = _Run(backend, sampler, [("p0(s,O)", o, "s+", data), ("p0(s,I)", _identity(N), "s+", data)])
    a, b = run.mean["p0(s,O)"], run.mean["p0(s,I)"]
    _check_denominator(2 * b - 1, "calibration denominator 2p0(s,I)-1", CalibrationDegenerateError)
    value = _vd_ratio(a, b)
    return CalibrationRecord(backend.key(), o.letters, n, value, dict(run.mean), dict(run.var), sampler.mode)


def cnr_vd_estimate(rho, o, n: int = 2, noise=None, sampler: ShotSampler | None = None,
                    calibration: CalibrationRecord | None = None) -> EstimatorReport:
    """O_VD(rho) / O_VD(s) with s the product +1 eigenstate of O through the same circuits.

    Pass a stored ``calibration`` to reuse O_VD(s); its shots are then not
    charged to this estimate.
    """
    r = as_array(rho)
    N = r.shape[0].bit_length() - 1
    o = _as_pauli(o, N)
    backend = as_backend(n, N, noise)
    sampler = _default_sampler(sampler)
    ident = _identity(N)
    data = vd_data_state(r, n)
    reqs = [("p0(rho,O)", o, "rho", data), ("p0(rho,I)", ident, "rho", data)]
    if calibration is None:
        s = ket_to_dm(make_calibration_set(o, need_general=False).s_plus)
        sd = vd_data_state(s, n)
        reqs += [("p0(s,O)", o, "s+", sd), ("p0(s,I)", ident, "s+", sd)]
    run = _Run(backend, sampler, reqs)
    means, vars_ = dict(run.mean), dict(run.var)
    if calibration is not None:
        if calibration.observable != o.letters or calibration.order != n:
            raise ConfigError("calibration record was taken for a different observable or order")
        means.update(calibration.components)
        vars_.update(calibration.variances)
    names = ["p0(rho,O)", "p0(rho,I)", "p0(s,O)", "p0(s,I)"]
    x = [means[k] for k in names]
    _check_denominator(2 * x[1] - 1, "VD denominator 2p0(rho,I)-1")
    _check_denominator(2 * x[3] - 1, "calibration denominator 2p0(s,I)-1", CalibrationDegenerateError)
    o_s = _vd_ratio(x[2], x[3])
    _check_denominator(o_s, "calibration value O_VD(s)", CalibrationDegenerateError)

    def f(p):
        return _vd_ratio(p[0], p[1]) / _vd_ratio(p[2], p[3])

    value = f(x)
    var = delta_method(f, x, [vars_[k] for k in names])
    comps = dict(means)
    comps["O_VD(s)"] = o_s
    return EstimatorReport("cnr-vd", value, var, run.shots, sampler.mode, comps, sampler.seed)


def cnr_vd_general_estimate(rho, o, n: int = 2, noise=None, sampler: ShotSampler | None = None) -> EstimatorReport:
    """Calibrated estimator with affine offsets, from six distinct circuit inputs.

    p0(x, O) = a + b Tr[x^2 O] and p0(x, I) = a' + b' Tr[x^2] are solved for from
    s+, s- (O-circuit) and g0, g1/2 (I-circuit, first copy replaced).
    """
    r = as_array(rho)
    N = r.shape[0].bit_length() - 1
    o = _as_pauli(o, N)
    if o.is_identity:
        raise ConfigError("the general estimator needs a non-identity observable")
    backend = as_backend(n, N, noise)
    sampler = _default_sampler(sampler)
    cs = make_calibration_set(o, need_general=True)
    ident = _identity(N)
    sp = ket_to_dm(cs.s_plus)
    reqs = [
        ("p0(rho,O)", o, "rho", vd_data_state(r, n)),
        ("p0(s+,O)", o, "s+", vd_data_state(sp, n)),
        ("p0(s-,O)", o, "s-", vd_data_state(ket_to_dm(cs.s_minus), n)),
        ("p0(rho,I)", ident, "rho", vd_data_state(r, n)),
        ("p0(g0,I)", ident, "g0", vd_data_state(sp, n, first=ket_to_dm(cs.g0))),
        ("p0(g1/2,I)", ident, "g1/2", vd_data_state(sp, n, first=ket_to_dm(cs.g_half))),
    ]
    run = _Run(backend, sampler, reqs)
    names = [q[0] for q in reqs]
    x = [run.mean[k] for k in names]

    def parts(p):
        return 2 * p[0] - p[1] - p[2], p[3] - p[4], 2 * (p[5] - p[4]), p[1] - p[2]

    num_o, num_i, b_i, b_o = parts(x)
    _check_denominator(num_i, "p0(rho,I) - p0(g0,I)", CalibrationDegenerateError)
    _check_denominator(b_o, "p0(s+,O) - p0(s-,O)", CalibrationDegenerateError)
    _check_denominator(b_i, "p0(g1/2,I) - p0(g0,I)", CalibrationDegenerateError)

    def f(p):
        a, b, c, d = parts(p)
        return (a / b) * (c / d)

    value = f(x)
    var = delta_method(f, x, [run.var[k] for k in names])
    comps = dict(run.mean)
    comps["b(O)"] = b_o / 2
    comps["b(I)"] = b_i / 2
    return EstimatorReport("cnr-vd-general", value, var, run.shots, sampler.mode, comps, sampler.seed)
