"""Dense density-matrix simulation of virtual distillation and its noise-resilient calibration."""

from .baselines import (ShadowConfig, ZneConfig, exponential_extrapolate, sd_estimate, unmitigated_estimate,
                        zne_vd_estimate)
from .channels import (GateNoiseModel, PauliNoiseSpec, QuantumChannel, check_channel, composite_gate_noise,
                       effective_noise_of, factorization_residual, make_damping, make_depolarizing,
                       make_pauli_channel, rates_from_noise_level)
from .circuits import (Circuit, Gate, Layer, ancilla_effect, build_ghz_circuit, build_hadamard_test,
                       build_swap_test, build_vd_circuit, p0_ancilla, run_circuit, vd_input)
from .errors import *  # noqa: F401,F403
from .estimators import (CalibrationRecord, EstimatorReport, ShotSampler, VDBackend, calibrate,
                         cnr_vd_estimate, cnr_vd_general_estimate, make_calibration_set, variance_of_ratio,
                         variance_scaling_factor, vd_estimate)
from .experiments import (ExperimentConfig, MetricRow, emit_results, gen_random_noisy_state, run_experiment,
                          run_swap_test_experiment)
from .pauli import PauliString
from .readout import TransferMatrix, build_transfer_matrix, ibu_unfold, load_transfer_matrix, save_transfer_matrix
from .tensor import (DensityMatrix, SpectralState, haar_random_unitary, partial_trace, spectral_decompose,
                     vd_oracle)
from .twirling import TwirlPlan, compile_twirled_vd, conjugate_through_clifford, cswap_twirl_set

__version__ = "0.1.0"
