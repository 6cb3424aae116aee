"""Batch runner for the benchmark grids: configs, trials, metrics, result files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .baselines import ShadowConfig, ZneConfig, sd_estimate, unmitigated_estimate, zne_vd_estimate
from .channels import GateNoiseModel, MODEL_KINDS, rates_from_noise_level
from .circuits import build_ghz_circuit, run_circuit
from .errors import CNRVDError, ConfigError
from .estimators import ShotSampler, VDBackend, cnr_vd_estimate, cnr_vd_general_estimate, vd_estimate
from .pauli import PauliString, eigenstate
from .readout import TransferMatrix, load_transfer_matrix, random_transfer_matrix
from .tensor import DensityMatrix, SpectralState, check_qubit_cap, haar_random_unitary, ket_to_dm, kron_all
from .twirling import TwirlPlan

KINDS = ("random-state-sweep", "ghz-comparison", "order-study", "swap-test")
ESTIMATORS = ("unmit", "vd", "cnr-vd", "cnr-vd-general", "zne-vd", "sd")
SWAP_ESTIMATORS = ("unmit", "cnr-vd")
DEFAULT_NOISE_LEVELS = tuple(float(x) for x in np.logspace(-4, -1, 7))
WORKERS_ENV = "CNRVD_WORKERS"

_KIND_DEFAULTS = {
    "random-state-sweep": dict(noise_model="stochastic-pauli", estimators=("unmit", "vd", "cnr-vd"),
                               state_prep_epsilons=(0.1,), rc_estimators=()),
    "order-study": dict(noise_model="stochastic-pauli", estimators=("unmit", "vd", "cnr-vd"),
                        state_prep_epsilons=(0.1,), rc_estimators=()),
    "ghz-comparison": dict(noise_model="composite-depol-damping",
                           estimators=("unmit", "vd", "cnr-vd", "zne-vd", "sd"),
                           state_prep_epsilons=(0.0,), rc_estimators=("cnr-vd", "zne-vd"), readout=True),
    "swap-test": dict(noise_model="composite-depol-damping", estimators=SWAP_ESTIMATORS,
                      state_prep_epsilons=(0.0,), rc_estimators=("cnr-vd",)),
}


def _tuple(x, cast):
    if isinstance(x, (list, tuple)):
        return tuple(cast(v) for v in x)
    return (cast(x),)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid.

    ``observables`` is a weight (int), ``"random"`` (weight uniform in 1..N per
    trial) or an explicit Pauli string. ``total_shots=None`` is exact mode;
    with ``shots_per_circuit`` every circuit instance gets ``total_shots``
    shots instead of sharing them. Estimators named in ``rc_estimators`` run
    on ``rc_instances`` twirled instances per circuit.
    """

    kind: str
    N: tuple[int, ...] = (4,)
    n: tuple[int, ...] = (2,)
    noise_levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS
    state_prep_epsilons: tuple[float, ...] | None = None
    observables: int | str = "random"
    estimators: tuple[str, ...] | None = None
    total_shots: int | None = None
    shots_per_circuit: bool = False
    trials: int = 50
    rc_instances: int = 4
    rc_estimators: tuple[str, ...] | None = None
    root_seed: int = 0
    noise_model: str | None = None
    state_prep_noise: float = 1e-3
    readout: bool | None = None
    readout_file: str | None = None
    ibu_iterations: int = 100
    zne_lambda: float = 3.0
    zne_efficiency: float = 0.94
    sd_unitaries: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        d = _KIND_DEFAULTS[self.kind]
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("N", _tuple(self.N, int))
        set_("n", _tuple(self.n, int))
        set_("noise_levels", _tuple(self.noise_levels, float))
        for key in ("state_prep_epsilons", "estimators", "rc_estimators", "noise_model", "readout"):
            if getattr(self, key) is None:
                set_(key, d.get(key, False))
        set_("state_prep_epsilons", _tuple(self.state_prep_epsilons, float))
        set_("estimators", _tuple(self.estimators, str))
        set_("rc_estimators", _tuple(self.rc_estimators, str) if self.rc_estimators else ())
        self._validate()

    def _validate(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.noise_levels:
            raise ConfigError("noise_levels must not be empty")
        if self.noise_model not in MODEL_KINDS:
            raise ConfigError(f"unknown noise model {self.noise_model!r}")
        for lvl in self.noise_levels:
            rates_from_noise_level(lvl, self.noise_model)
        if not 0 <= self.state_prep_noise <= 0.75:
            raise ConfigError("state_prep_noise must lie in [0, 0.75]")
        allowed = SWAP_ESTIMATORS if self.kind == "swap-test" else ESTIMATORS
        bad = [e for e in self.estimators + self.rc_estimators if e not in allowed]
        if bad:
            raise ConfigError(f"estimators {bad} not available for {self.kind}")
        if any(not 0 <= e < 1 for e in self.state_prep_epsilons):
            raise ConfigError("state-preparation error rates must lie in [0, 1)")
        if any(n < 2 for n in self.n):
            raise ConfigError("VD order must be >= 2")
        if self.kind == "swap-test" and (self.n != (2,) or any(not 2 <= N <= 5 for N in self.N)):
            raise ConfigError("swap-test runs need n = 2 and N in 2..5")
        if self.kind == "ghz-comparison" and any(N < 2 for N in self.N):
            raise ConfigError("GHZ runs need N >= 2")
        for N in self.N:
            for n in self.n:
                check_qubit_cap(n * N + 1)
        if self.total_shots is not None and self.total_shots < 1:
            raise ConfigError("total_shots must be >= 1 (or null for exact mode)")
        if self.rc_instances < 1 and self.rc_estimators:
            raise ConfigError("rc_instances must be >= 1 when randomized compiling is requested")
        if "sd" in self.estimators and self.total_shots is None and self.sd_unitaries is None:
            raise ConfigError("exact-mode shadow distillation needs sd_unitaries")
        if isinstance(self.observables, str) and self.observables != "random":
            if any(len(self.observables) != N for N in self.N):
                raise ConfigError("explicit observable length must match N")
            PauliString(self.observables)
        elif isinstance(self.observables, int) and any(not 1 <= self.observables <= N for N in self.N):
            raise ConfigError("observable weight must lie in 1..N")
        if self.ibu_iterations < 1:
            raise ConfigError("ibu_iterations must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("config needs a 'kind'")
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        """YAML or JSON document with ExperimentConfig keys."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        d = yaml.safe_load(text)
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def with_seed(self, seed: int) -> ExperimentConfig:
        return ExperimentConfig(**{**asdict(self), "root_seed": int(seed)})


@dataclass(frozen=True)
class MetricRow:
    estimator: str
    noise_level: float
    epsilon: float
    N: int
    n: int
    M: int
    mean_abs_error: float
    std_abs_error: float
    failure_rate: float | None
    decay_rate: float | None
    trials: int
    invalid: int = 0

    def __post_init__(self):
        if not math.isnan(self.mean_abs_error) and self.mean_abs_error < 0:
            raise ValueError("absolute error must be >= 0")
        if self.failure_rate is not None and not 0 <= self.failure_rate <= 1:
            raise ValueError("failure rate must lie in [0, 1]")


@dataclass(frozen=True)
class TrialRecord:
    """Raw values of one trial at one grid point."""

    trial: int
    N: int
    n: int
    noise_level: float
    epsilon: float
    observable: str
    truth: float
    estimates: dict = field(default_factory=dict)


# --- states --------------------------------------------------------------------------

def gen_random_noisy_state(N: int, epsilon: float, rng: np.random.Generator) -> SpectralState:
    """(1 - eps)|psi><psi| + eps|psi_e><psi_e| with Haar psi and psi_e orthogonalised against it."""
    if not 0 <= epsilon < 1:
        raise ConfigError("epsilon must lie in [0, 1)")
    d = 1 << N
    draws = rng.standard_normal((2, d)) + 1j * rng.standard_normal((2, d))
    psi = draws[0] / np.linalg.norm(draws[0])
    e = draws[1] - np.vdot(psi, draws[1]) * psi
    e = e / np.linalg.norm(e)
    return SpectralState(float(epsilon), psi, ((1.0, e),))


def ghz_state(N: int, noise_level: float) -> DensityMatrix:
    return run_circuit(build_ghz_circuit(N, noise_level if noise_level > 0 else None), DensityMatrix.zero(N))


# --- seeding -------------------------------------------------------------------------

_STATE, _OBS, _NOISE, _SHOTS, _TWIRL, _READOUT = range(6)


def _rng(cfg: ExperimentConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.root_seed, *key]))


def _observable(cfg: ExperimentConfig, N: int, trial: int) -> PauliString:
    if isinstance(cfg.observables, str) and cfg.observables != "random":
        return PauliString(cfg.observables)
    if cfg.kind == "ghz-comparison" and cfg.observables == "random":
        return PauliString("X" * N)
    rng = _rng(cfg, trial, _OBS, N)
    w = int(rng.integers(1, N + 1)) if cfg.observables == "random" else int(cfg.observables)
    return PauliString.random(N, w, rng)


def _noise_model(cfg: ExperimentConfig, level: float, rng: np.random.Generator) -> GateNoiseModel | None:
    if level == 0:
        return None
    kind = cfg.noise_model
    if kind == "stochastic-pauli":
        return GateNoiseModel.stochastic_pauli(level, rng)
    if kind == "composite-depol-damping":
        return GateNoiseModel.composite(level)
    if kind == "global-depolarizing":
        return GateNoiseModel.global_depolarizing(level)
    return GateNoiseModel.depolarizing(level)


def _readout_model(cfg: ExperimentConfig, N: int) -> TransferMatrix | None:
    if not cfg.readout:
        return None
    if cfg.readout_file:
        tm = load_transfer_matrix(cfg.readout_file)
        if tm.num_qubits < N:
            raise ConfigError(f"{cfg.readout_file}: transfer matrix covers {tm.num_qubits} < {N} qubits")
        return tm if tm.num_qubits == N else tm.marginal(range(N))
    return random_transfer_matrix(N, _rng(cfg, _READOUT, N))


def _sampler(cfg: ExperimentConfig, seed: np.random.SeedSequence) -> ShotSampler:
    return ShotSampler(cfg.total_shots, per_circuit=cfg.shots_per_circuit, rng=np.random.default_rng(seed))


# --- one grid point ------------------------------------------------------------------

def _estimate(name: str, fn) -> float:
    try:
        return float(fn().value)
    except CNRVDError:
        return float("nan")


def _evaluate_vd_point(cfg: ExperimentConfig, rho: np.ndarray, o: PauliString, N: int, n: int, level: float,
                       trial: int, il: int, ie: int, readout: TransferMatrix | None) -> dict:
    noise = _noise_model(cfg, level, _rng(cfg, trial, _NOISE, N, il))
    plain = VDBackend(n, N, noise)
    twirled = (VDBackend(n, N, noise, twirl=TwirlPlan(cfg.rc_instances, _rng(cfg, trial, _TWIRL, N, il, n)))
               if cfg.rc_estimators and noise is not None else plain)
    sampler = _sampler(cfg, np.random.SeedSequence([cfg.root_seed, trial, _SHOTS, N, il, ie, n]))
    backend = lambda e: twirled if e in cfg.rc_estimators else plain
    out = {}
    for e in cfg.estimators:
        if e == "unmit":
            out[e] = _estimate(e, lambda: unmitigated_estimate(rho, o, readout, sampler, cfg.ibu_iterations))
        elif e == "vd":
            out[e] = _estimate(e, lambda: vd_estimate(rho, o, n, backend(e), sampler))
        elif e == "cnr-vd":
            out[e] = _estimate(e, lambda: cnr_vd_estimate(rho, o, n, backend(e), sampler))
        elif e == "cnr-vd-general":
            out[e] = _estimate(e, lambda: cnr_vd_general_estimate(rho, o, n, backend(e), sampler))
        elif e == "zne-vd":
            if noise is None:
                out[e] = _estimate(e, lambda: vd_estimate(rho, o, n, None, sampler))
            else:
                zc = ZneConfig(cfg.zne_lambda, cfg.zne_efficiency)
                out[e] = _estimate(e, lambda: zne_vd_estimate(rho, o, n, backend(e), zc, sampler))
        elif e == "sd":
            sc = (ShadowConfig(cfg.sd_unitaries, None) if cfg.total_shots is None
                  else ShadowConfig.for_total_shots(cfg.total_shots))
            out[e] = _estimate(e, lambda: sd_estimate(rho, o, sc, sampler, readout, cfg.ibu_iterations))
    return out


def _trial_job(args) -> list[TrialRecord]:
    cfg, trial, N = args
    o = _observable(cfg, N, trial)
    readout = _readout_model(cfg, N)
    records = []
    for ie, eps in enumerate(cfg.state_prep_epsilons):
        if cfg.kind == "ghz-comparison":
            rho = ghz_state(N, cfg.state_prep_noise).matrix
            truth = float(ghz_state(N, 0.0).expectation(o.matrix))
        else:
            st = gen_random_noisy_state(N, eps, _rng(cfg, trial, _STATE, N, ie))
            rho = st.density_matrix().matrix
            truth = float(np.real(np.vdot(st.dominant, o.matrix @ st.dominant)))
        for n in cfg.n:
            for il, level in enumerate(cfg.noise_levels):
                est = _evaluate_vd_point(cfg, rho, o, N, n, level, trial, il, ie, readout)
                records.append(TrialRecord(trial, N, n, level, eps, o.letters, truth, est))
    return records


# --- SWAP test -----------------------------------------------------------------------

def overlap_pair(N: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """U|0...0> and U|+...+> for one Haar-random U; |<psi|phi>|^2 = 2^-N."""
    u = haar_random_unitary(1 << N, rng)
    zero = np.zeros(1 << N, dtype=complex)
    zero[0] = 1
    plus = kron_all([eigenstate("X", 1).reshape(2, 1)] * N).reshape(-1)
    return u @ zero, u @ plus


def _swap_job(args) -> list[TrialRecord]:
    cfg, trial, N = args
    psi, phi = overlap_pair(N, _rng(cfg, trial, _STATE, N))
    data = np.kron(ket_to_dm(psi), ket_to_dm(phi))
    cal = np.zeros_like(data)
    cal[0, 0] = 1
    truth = float(abs(np.vdot(psi, phi)) ** 2)
    ident = PauliString.identity(N)
    records = []
    for il, level in enumerate(cfg.noise_levels):
        noise = _noise_model(cfg, level, _rng(cfg, trial, _NOISE, N, il))
        plain = VDBackend(2, N, noise)
        twirled = (VDBackend(2, N, noise, twirl=TwirlPlan(cfg.rc_instances, _rng(cfg, trial, _TWIRL, N, il, 2)))
                   if cfg.rc_estimators and noise is not None else plain)
        sampler = _sampler(cfg, np.random.SeedSequence([cfg.root_seed, trial, _SHOTS, N, il, 0, 2]))
        est = {}
        for e in cfg.estimators:
            be = twirled if e in cfg.rc_estimators else plain
            if e == "unmit":
                alloc = sampler.allocate(["p0(psi,phi)"])
                p, _ = sampler.measure((be.uid, "psi,phi"), be.p0(ident, "psi,phi", data), alloc["p0(psi,phi)"])
                est[e] = 2 * p - 1
            else:
                alloc = sampler.allocate(["p0(psi,phi)", "p0(s)"])
                p, _ = sampler.measure((be.uid, "psi,phi"), be.p0(ident, "psi,phi", data), alloc["p0(psi,phi)"])
                q, _ = sampler.measure((be.uid, "s"), be.p0(ident, "s", cal), alloc["p0(s)"])
                est[e] = (2 * p - 1) / (2 * q - 1) if abs(2 * q - 1) > 1e-9 else float("nan")
        records.append(TrialRecord(trial, N, 2, level, 0.0, ident.letters, truth, est))
    return records


# --- driver --------------------------------------------------------------------------

def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    return max(1, w)


def run_trials(cfg: ExperimentConfig) -> list[TrialRecord]:
    """Every trial of every grid point, merged in (N, trial) order."""
    job = _swap_job if cfg.kind == "swap-test" else _trial_job
    jobs = [(cfg, t, N) for N in cfg.N for t in range(cfg.trials)]
    workers = _workers()
    if workers == 1:
        chunks = [job(a) for a in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, jobs))
    return [r for chunk in chunks for r in chunk]


def _errors(records: Sequence[TrialRecord], e: str) -> np.ndarray:
    return np.array([abs(r.estimates[e] - r.truth) for r in records])


def aggregate(cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> list[MetricRow]:
    groups: dict = {}
    for r in records:
        groups.setdefault((r.N, r.n, r.noise_level, r.epsilon), []).append(r)
    M = cfg.total_shots or 0
    means: dict = {}
    rows = []
    for (N, n, level, eps), recs in groups.items():
        unmit = _errors(recs, "unmit") if "unmit" in cfg.estimators else None
        for e in cfg.estimators:
            err = _errors(recs, e)
            ok = ~np.isnan(err)
            mean = float(np.mean(err[ok])) if ok.any() else float("nan")
            std = float(np.std(err[ok])) if ok.any() else float("nan")
            fail = None
            if unmit is not None:
                fail = float(np.mean(~ok | (np.where(ok, err, 0) > unmit)))
            means[(e, N, n, level, eps)] = mean
            rows.append([e, level, eps, N, n, M, mean, std, fail, len(recs), int((~ok).sum())])
    out = []
    for e, level, eps, N, n, M_, mean, std, fail, trials, invalid in rows:
        decay = None
        if cfg.kind == "order-study" and {2, 3} <= set(cfg.n):
            decay = decay_rate(means[(e, N, 2, level, eps)], means[(e, N, 3, level, eps)])
        out.append(MetricRow(e, level, eps, N, n, M_, mean, std, fail, decay, trials, invalid))
    return out


def decay_rate(err_order2: float, err_order3: float) -> float:
    """log10 of the order-2 to order-3 error ratio; positive when order 3 is more accurate."""
    if err_order2 <= 0 or err_order3 <= 0:
        return float("inf") if err_order3 <= 0 < err_order2 else float("nan")
    return float(np.log10(err_order2 / err_order3))


def run_experiment(cfg: ExperimentConfig) -> list[MetricRow]:
    return aggregate(cfg, run_trials(cfg))


def run_swap_test_experiment(cfg: ExperimentConfig) -> list[MetricRow]:
    if cfg.kind != "swap-test":
        raise ConfigError("run_swap_test_experiment needs a swap-test config")
    return run_experiment(cfg)


def crossing_threshold(levels: Sequence[float], errors: Sequence[float], reference: Sequence[float]) -> float:
    """Noise level where ``errors`` first exceeds ``reference``.

    The crossing is interpolated linearly in log10(level) on the log10 error
    difference between the last grid point below and the first above. Returns
    the smallest level if the first point is already above and ``inf`` if no
    point is (the threshold is then at least the largest level).
    """
    lv = np.log10(np.asarray(levels, dtype=float))
    d = np.log10(np.asarray(errors, dtype=float)) - np.log10(np.asarray(reference, dtype=float))
    above = np.nonzero(d > 0)[0]
    if len(above) == 0:
        return math.inf
    i = int(above[0])
    if i == 0:
        return float(levels[0])
    t = d[i - 1] / (d[i - 1] - d[i])
    return float(10 ** (lv[i - 1] + t * (lv[i] - lv[i - 1])))


def threshold_for(rows: Sequence[MetricRow], estimator: str, N: int, n: int = 2, epsilon: float | None = None,
                  reference: str = "unmit") -> float:
    sel = lambda e: sorted((r for r in rows if r.estimator == e and r.N == N and r.n == n
                            and (epsilon is None or r.epsilon == epsilon)), key=lambda r: r.noise_level)
    est, ref = sel(estimator), sel(reference)
    return crossing_threshold([r.noise_level for r in est], [r.mean_abs_error for r in est],
                              [r.mean_abs_error for r in ref])


# --- output --------------------------------------------------------------------------

COLUMNS = tuple(f.name for f in fields(MetricRow))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def rows_to_json(rows: Sequence[MetricRow], config: ExperimentConfig | None = None,
                 records: Sequence[TrialRecord] | None = None) -> str:
    doc = {"rows": [asdict(r) for r in rows]}
    if config is not None:
        doc["config"] = config.to_dict()
    if records is not None:
        doc["trials"] = [asdict(r) for r in records]
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"


def emit_results(rows: Sequence[MetricRow], fmt: str, path, config: ExperimentConfig | None = None,
                 records: Sequence[TrialRecord] | None = None) -> Path:
    """Write rows as CSV or JSON (JSON may also carry the config and raw trials)."""
    if not rows:
        raise ConfigError("no result rows to emit")
    if fmt == "csv":
        text = rows_to_csv(rows)
    elif fmt == "json":
        text = rows_to_json(rows, config, records)
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path
