"""Simulation and depth estimation for asynchronous SPAD time-of-flight imaging."""
from .acquisition import (HistogramData, TimestampStream, build_histogram, derive_rng,
                          exact_histogram_distribution, simulate)
from .design import (expected_denominator_photon_driven, expected_denominator_uniform,
                     expected_total_denominator, fisher_information, lambert_w_branch_neg1,
                     optimal_active_time, optimal_attenuation_photon_driven)
from .errors import BudgetError, EstimationError, InstanceTooLarge, StreamFormatError
from .estimator import DepthEstimate, RmseReport, coates_estimate, histogram_from_stream, modulo_rmse
from .model import AcquisitionConfig, Mode, PixelFlux
from .pipeline import run_trials
from .schedule import ShiftSchedule, coprime_mismatch_schedule, schedule_for, uniform_shift_schedule

__version__ = "0.1.0"
