"""dyadiclab: Fourier-side dyadic function spaces and bilinear estimates at desk scale."""

__version__ = "0.1.0"

from .errors import (
    BlowupStepError,
    ConfigError,
    DivergenceError,
    DyadicLabError,
    FitError,
    GridSizeError,
    ParabolaClippingError,
    PreconditionError,
    RegionOutOfRangeError,
    ReportError,
    SupportOverflowError,
    WeightOverflowError,
)
from .grid import FrequencyGrid, GridFunction, build_grid, mixed_norm, synthesize
from .regions import dyadic_decompose, region_mask
from .norms import NormBreakdown, SpaceSpec, norm_value, pasting_check, space_norm
from .bilinear import bilinear_map, convolve, domination_excess, duhamel_apply, estimate_ratio
from .parabola import ParabolaMeasure, annulus_measure, measure_convolve
from .lemmas import LemmaSpec, SlopeFit, builtin_lemmas, fit_slope, get_lemma, run_lemma
from .probes import ProbeFamily, ProbeReport, make_probe_pair, maximize_ratio, proposition_suite, sweep
from .solver import (PeriodicBox, continuity_probe, linear_propagate, picard_iterate,
                     rough_data, splitstep_solve)
from .reports import emit_report

__all__ = [name for name in dir() if not name.startswith("_")]
