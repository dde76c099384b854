"""Knudsen self-diffusivity of gas in channels with billiard-cell walls."""
from .errors import (ConfigError, CornerSignal, DegenerateFlatnessError, GeometryError,
                     KnudsenError, NonterminatingTrajectoryError, NumericError, ParameterError,
                     ReliabilityError, StorageError, TangencySignal, TrajectoryRejected)
from .geometry import (Arc, FlatnessResult, Profile, Segment, flatness_h, make_bumps,
                       make_bumps_with_wall, make_flat, make_mixture, make_two_bumps, normal_at)
from .billiard import (CellTrajectory, ParticleState, first_hit, reflect,
                       single_collision_fraction, trace_batch, trace_cell)
from .operator import (SpectralSummary, TransitionMatrix, VelocityGrid, build_matrix,
                       mixture_operator, sample_transition, spectral_measure, spectral_summary,
                       stationarity_defect)
from .spectral_basis import (LegendreSeries, QuadratureRule, expand, inner_product_pi,
                             legendre_eval, legendre_operator_apply, poisson_solve_series)
from .diffusivity import (DiffusivityReport, Observable, accommodation_equivalent,
                          direct_sigma2, displacement_observable, eta_asymptotic,
                          galerkin_sigma2, gap_asymptotic, lser_sigma2, mixture_eta_shift,
                          spectral_sigma2)

__version__ = "0.1.0"
