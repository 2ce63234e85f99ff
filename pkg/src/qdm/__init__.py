"""Quantum discrete map (QDM) forecasting on an exact small-qubit simulator."""
from .model import (ChannelState, LeclParams, QdmConfig, QdmModel, Trajectory, apply_lecl, build_ansatz,
                    build_model, closed_form_model, closed_form_step, encode, generate_trajectory, load_model,
                    qdm_step, save_model)
from .quantum import (GateOp, HamiltonianSpec, NoiseSpec, ObservableSpec, QuantumState, apply_gate,
                      apply_noise_channel, apply_readout_error, evolve_hamiltonian, expectation, init_state)
from .training import (TrainConfig, accumulate_sensitivities, finite_difference_gradient, fit_lecl,
                       loss_gradient, mse_loss, predict, step_partials, train)
from .estimators import LECLCalibrator, QDMForecaster, QRCForecaster

__version__ = "0.1.0"
