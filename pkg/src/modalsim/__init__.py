"""Differentiable modal simulation and inverse modelling of strings,
membranes, and plates."""

__version__ = "0.1.0"

from .model import (
    MaterialParams, String, RectMembrane, RectPlate, ModelSpec, NormalizedParams,
    ValidationError, validate, derive_tau, derive_normalized,
    spec_to_dict, spec_from_dict, spec_to_json, spec_from_json,
)
from .modes import (
    ModeBasis, PointReadout, string_basis, rect_basis, basis_for, airy_eigenvalues,
    evaluate_mode, evaluate_all_modes, point_readout, project_point_excitation,
    project_function, reconstruct, sample_modes,
)
from .coupling import (
    CouplingTensors, GridField, vk_operator, vk_bilinear, compute_H, compute_C,
    derive_C_from_H, simply_supported_tensors, sparsify, tension_nl_force,
    vk_nl_force, save_tensors, load_tensors, tensors_to_csv,
)
from .integrators import (
    OscillatorBank, FtmCoeffs, SvCoeffs, SimState, Trajectory,
    InitialCondition, PointForce, raised_cosine_pulse, triangular_pluck,
    OverdampedError, InstabilityError, SchemeError,
    oscillator_bank, bank_from_spec, ftm_coeffs, sv_coeffs, step, simulate,
    scan_linear, scan_sequential, rk_reference,
)
from .losses import (
    LossWeights, loss_log, loss_sc, loss_sot, loss_total,
    loss_log_grad, loss_sc_grad, loss_sot_grad, loss_total_grad,
)
from .analysis import (
    Spectrogram, LpcModel, stft, lpc, lpc_envelope_at, bark_grid, tf_magnitude,
    hz_to_bark, bark_to_hz,
)
from .audio_io import WavFormatError, wav_read, wav_write
from .fitting import (
    FitConfig, FitResult, FitDivergedError, GradientReport,
    TimeDomainProblem, FrequencyDomainProblem,
    fit, fit_time_domain, fit_frequency_domain,
    gradient, gradient_report, adam_step, one_cycle_lr, AdamState,
)
