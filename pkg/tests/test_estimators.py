import json

import numpy as np
import pytest

from cnrvd.channels import GateNoiseModel, make_damping, separable_unitary_mixture
from cnrvd.circuits import Circuit, Layer, NoiseOp, build_vd_circuit, p0_ancilla, vd_input
from cnrvd.errors import CalibrationDegenerateError, ConfigError, DegenerateDenominatorError
from cnrvd.estimators import (EXACT, CalibrationRecord, ShotSampler, VDBackend, calibrate, cnr_vd_estimate,
                              cnr_vd_general_estimate, make_calibration_set, sample_p0, variance_of_ratio,
                              variance_scaling_factor, vd_estimate)
from cnrvd.experiments import gen_random_noisy_state
from cnrvd.pauli import PauliString, eigenstate
from cnrvd.tensor import (DensityMatrix, haar_random_state, haar_random_unitary, ket_to_dm, random_density_matrix,
                          vd_oracle)


def _oracle_ratio(rho, o, n=2):
    num, den = vd_oracle(rho, o, n)
    return num / den


def _random_pauli(N, weight, rng):
    return PauliString.random(N, weight, rng)


# --- sampling -----------------------------------------------------------------------

def test_sample_p0_certain(rng):
    c = Circuit(1)
    assert sample_p0(c, DensityMatrix.zero(1), 17, rng) == 1.0


def test_sample_p0_concentration():
    c = build_vd_circuit(2, 1, None)
    a, b = np.eye(2)[0], np.eye(2)[1]
    state = vd_input(ket_to_dm(a), 2, first=ket_to_dm(b))
    assert p0_ancilla(c, state) == pytest.approx(0.5)
    est = sample_p0(c, state, 10**6, np.random.default_rng(3))
    assert abs(est - 0.5) < 0.002


def test_sample_p0_deterministic():
    c = build_vd_circuit(2, 1, None)
    state = vd_input(ket_to_dm(eigenstate("X")), 2, first=ket_to_dm(eigenstate("Z")))
    a = sample_p0(c, state, 1000, np.random.default_rng(11))
    b = sample_p0(c, state, 1000, np.random.default_rng(11))
    assert a == b


def test_allocation_sums_to_total():
    s = ShotSampler(1001)
    alloc = s.allocate(["a", "b", "c", "d"])
    assert sum(alloc.values()) == 1001
    assert ShotSampler(10, per_circuit=True).allocate(["a", "b"]) == {"a": 10, "b": 10}
    with pytest.raises(ConfigError):
        ShotSampler(3).allocate(["a", "b", "c", "d"])


# --- noisy VD -----------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
def test_vd_noiseless_matches_oracle(n, rng):
    for _ in range(5):
        rho = random_density_matrix(2, rng)
        o = _random_pauli(2, 2, rng)
        rep = vd_estimate(rho, o, n)
        assert abs(rep.value - _oracle_ratio(rho, o, n)) < 1e-10
        assert rep.mode == EXACT and rep.variance == 0


def test_vd_pure_state_exact(rng):
    psi = haar_random_state(4, rng)
    o = PauliString("YZ")
    assert abs(vd_estimate(ket_to_dm(psi), o).value - np.real(np.vdot(psi, o.matrix @ psi))) < 1e-10


def test_vd_suppresses_state_error(rng):
    eps, wins = 0.1, 0
    for _ in range(50):
        st = gen_random_noisy_state(2, eps, rng)
        o = _random_pauli(2, int(rng.integers(1, 3)), rng)
        truth = o.expectation(ket_to_dm(st.dominant))
        err = abs(vd_estimate(st.density_matrix(), o).value - truth)
        unmit = abs(o.expectation(st.density_matrix()) - truth)
        assert err <= 2 * (eps / (1 - eps)) ** 2 + 1e-12
        wins += err < unmit
    assert wins >= 45


def test_vd_degenerate_denominator():
    # a maximally mixed input makes the identity circuit read 2p0-1 = Tr[rho^2] = 1/d,
    # so force it to zero with total ancilla dephasing
    deph = make_damping("phase", 1.0)

    def factory(o):
        c = build_vd_circuit(2, 1, o)
        layers = list(c.layers)
        layers.insert(-1, Layer((), (NoiseOp(deph, (0,)),)))
        return Circuit(c.num_qubits, tuple(layers), c.layout)

    with pytest.raises(DegenerateDenominatorError):
        vd_estimate(DensityMatrix.zero(1), "Z", 2, VDBackend(2, 1, circuit_factory=factory))


# --- calibration states --------------------------------------------------------------

def test_calibration_z():
    cs = make_calibration_set(PauliString("Z"))
    assert np.allclose(cs.s_plus, [1, 0]) and np.allclose(cs.s_minus, [0, 1])


def test_calibration_xx():
    o = PauliString("XX")
    cs = make_calibration_set(o, need_general=False)
    plus = np.array([1, 1]) / np.sqrt(2)
    assert np.allclose(cs.s_plus, np.kron(plus, plus))
    s = ket_to_dm(cs.s_plus)
    assert np.real(np.trace(s @ s @ o.matrix)) == pytest.approx(1.0)


def test_calibration_identity():
    cs = make_calibration_set(PauliString("II"))
    z, o = np.array([1, 0]), np.array([0, 1])
    assert np.allclose(cs.s_plus, np.kron(z, z))
    assert np.allclose(cs.g0, np.kron(o, z))
    assert np.allclose(cs.g_half, np.kron((z + o) / np.sqrt(2), z))
    assert abs(np.vdot(cs.s_plus, cs.g0)) ** 2 < 1e-12
    assert abs(abs(np.vdot(cs.s_plus, cs.g_half)) ** 2 - 0.5) < 1e-12
    assert cs.s_minus is None


def test_calibration_modifies_lowest_support_qubit():
    cs = make_calibration_set(PauliString("IYX"))
    assert cs.modified_qubit == 1
    o = PauliString("IYX").matrix
    assert np.allclose(o @ cs.s_minus, -cs.s_minus)


# --- CNR-VD -------------------------------------------------------------------------

def test_cnr_noiseless_equals_vd(rng):
    rho = random_density_matrix(2, rng)
    o = PauliString("XZ")
    rep = cnr_vd_estimate(rho, o)
    assert rep.value == pytest.approx(vd_estimate(rho, o).value, abs=1e-12)
    assert rep.components["O_VD(s)"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_cnr_weight1_exact_under_pauli_noise(N, rng):
    for level in (1e-3, 1e-2, 1e-1):
        noise = GateNoiseModel.stochastic_pauli(level, rng)
        rho = random_density_matrix(N, rng)
        o = _random_pauli(N, 1, rng)
        assert abs(cnr_vd_estimate(rho, o, 2, noise).value - _oracle_ratio(rho, o)) < 1e-10


def test_cnr_exact_under_global_depolarizing(rng):
    noise = GateNoiseModel.global_depolarizing(0.05)
    for N in (1, 2, 3):
        rho = random_density_matrix(N, rng)
        for w in range(1, N + 1):
            o = _random_pauli(N, w, rng)
            assert abs(cnr_vd_estimate(rho, o, 2, noise).value - _oracle_ratio(rho, o)) < 1e-10


def test_cnr_not_exact_for_weight2_pauli_noise(rng):
    # undesired SWAPs mix in products of partial expectations once the weight exceeds 1
    noise = GateNoiseModel.stochastic_pauli(0.05, rng)
    rho = random_density_matrix(2, rng)
    o = PauliString("XZ")
    assert abs(cnr_vd_estimate(rho, o, 2, noise).value - _oracle_ratio(rho, o)) > 1e-8


def test_linearity_weight1(rng):
    o = PauliString("IZ")
    backend = VDBackend(2, 2, GateNoiseModel.stochastic_pauli(0.05, rng))
    xs, ys = [], []
    for _ in range(20):
        rho = random_density_matrix(2, rng)
        p = vd_estimate(rho, o, 2, backend).components["p0(rho,O)"]
        xs.append(np.real(np.trace(rho.matrix @ rho.matrix @ o.matrix)))
        ys.append(2 * p - 1)
    xs, ys = np.array(xs), np.array(ys)
    a = xs @ ys / (xs @ xs)
    assert np.max(np.abs(ys - a * xs)) < 1e-9
    s = calibrate(o, 2, 2, backend)
    assert abs(2 * s.components["p0(s,O)"] - 1 - a) < 1e-10
    assert 0 < a < 1


def test_calibration_record_reuse(rng):
    backend = VDBackend(2, 2, GateNoiseModel.composite(0.01))
    o = PauliString("XY")
    rec = calibrate(o, 2, 2, backend)
    again = CalibrationRecord.from_dict(json.loads(rec.to_json()))
    rho = random_density_matrix(2, rng)
    direct = cnr_vd_estimate(rho, o, 2, backend)
    reused = cnr_vd_estimate(rho, o, 2, backend, calibration=again)
    assert reused.value == pytest.approx(direct.value, abs=1e-14)
    with pytest.raises(ConfigError):
        cnr_vd_estimate(rho, "ZZ", 2, backend, calibration=again)


def test_monotone_degradation(rng):
    grid = (1e-4, 1e-3, 1e-2, 1e-1)
    ok = 0
    for _ in range(10):
        base = GateNoiseModel.stochastic_pauli(1e-4, rng)
        st = gen_random_noisy_state(2, 0.1, rng)
        o = PauliString("XY")
        ref = _oracle_ratio(st.density_matrix(), o)
        errs = [abs(cnr_vd_estimate(st.density_matrix(), o, 2, base.scaled(l / 1e-4)).value - ref) for l in grid]
        ok += all(b >= a - 1e-12 for a, b in zip(errs, errs[1:]))
    assert ok >= 9


@pytest.mark.parametrize("n", [2, 3])
def test_order_suppression_slope(n, rng):
    eps = np.geomspace(0.02, 0.2, 7)
    slopes = []
    for _ in range(5):
        psi = haar_random_state(4, rng)
        u = haar_random_unitary(4, rng)
        e = u[:, 0] - np.vdot(psi, u[:, 0]) * psi
        e /= np.linalg.norm(e)
        o = PauliString("ZX")
        truth = o.expectation(ket_to_dm(psi))
        errs = [abs(vd_estimate((1 - x) * ket_to_dm(psi) + x * ket_to_dm(e), o, n).value - truth) for x in eps]
        slopes.append(np.polyfit(np.log(eps), np.log(errs), 1)[0])
    assert abs(np.median(slopes) - n) < 0.3


# --- generalized CNR-VD ------------------------------------------------------------

def test_general_noiseless(rng):
    rho = random_density_matrix(2, rng)
    o = PauliString("ZY")
    assert abs(cnr_vd_general_estimate(rho, o).value - _oracle_ratio(rho, o)) < 1e-10


def _with_end_noise(ch):
    def factory(o):
        c = build_vd_circuit(2, 2, o)
        layers = c.layers + (Layer((), (NoiseOp(ch, tuple(range(c.num_qubits))),)),)
        return Circuit(c.num_qubits, layers, c.layout)
    return factory


def test_general_exact_on_separable_mixture(rng):
    for _ in range(3):
        w = rng.dirichlet(np.ones(3))
        pairs = [(haar_random_unitary(2, rng), haar_random_unitary(16, rng)) for _ in range(3)]
        backend = VDBackend(2, 2, circuit_factory=_with_end_noise(separable_unitary_mixture(w, pairs)))
        rho = random_density_matrix(2, rng)
        o = _random_pauli(2, 2, rng)
        assert abs(cnr_vd_general_estimate(rho, o, 2, backend).value - _oracle_ratio(rho, o)) < 1e-9
        assert abs(cnr_vd_estimate(rho, o, 2, backend).value - _oracle_ratio(rho, o)) < 1e-9


def test_general_degenerate_under_total_dephasing(rng):
    deph = make_damping("phase", 1.0)

    def factory(o):
        c = build_vd_circuit(2, 1, o)
        layers = list(c.layers)
        layers.insert(-1, Layer((), (NoiseOp(deph, (0,)),)))
        return Circuit(c.num_qubits, tuple(layers), c.layout)

    with pytest.raises(CalibrationDegenerateError):
        cnr_vd_general_estimate(random_density_matrix(1, rng), "X", 2, VDBackend(2, 1, circuit_factory=factory))
    with pytest.raises(ConfigError):
        cnr_vd_general_estimate(random_density_matrix(1, rng), "I")


# --- variance ------------------------------------------------------------------------

def test_variance_of_ratio_examples():
    assert variance_of_ratio(1.0, 0.0, 2.0, 0.0) == 0.0
    assert variance_of_ratio(1.0, 0.01, 1.0, 0.01) == pytest.approx(0.02)
    assert variance_of_ratio(0.0, 0.04, 2.0, 0.5) == pytest.approx(0.01)
    with pytest.raises(DegenerateDenominatorError):
        variance_of_ratio(1.0, 0.1, 0.0, 0.1)


def test_variance_scaling_factor():
    assert variance_scaling_factor(1.0) == 2.0
    g, k = 0.01, 2
    taylor = 2 + (8 * g + 16 * g**2 / 3) * k + 160 * g**2 * k**2 / 9
    assert abs(variance_scaling_factor((1 - 4 * g / 3) ** k) - taylor) < 1e-3
    assert variance_scaling_factor(1e-3) > 1e11
    with pytest.raises(DegenerateDenominatorError):
        variance_scaling_factor(0.0)


def test_sampled_report_fields(rng):
    rho = random_density_matrix(1, rng)
    rep = vd_estimate(rho, "X", 2, GateNoiseModel.composite(1e-3), ShotSampler(10**4, seed=5))
    d = json.loads(rep.to_json())
    assert {"value", "variance", "shots_used", "mode", "components"} <= set(d)
    assert d["shots_used"] == 10**4 and d["mode"] == "sampled" and d["variance"] > 0
