"""Lyapunov spectra, Oseledets splittings and stochastic stability of matrix cocycles."""

from .cocycle import (CocycleSystem, NoiseRealization, PerturbedCocycle, cocycle_block,
                      cocycle_from_dict, perturbed_block, sample_entry_cube, sample_operator_ball)
from .errors import (ChartEscape, CocycleError, ConfigError, DegenerateGap, DimensionMismatch,
                     RankDeficient, SamplerError, TransversalityFailure, WindowUnderrun)
from .geometry import SingularTriple, Subspace, angle, bottom_space, compound, perp, top_space, xi
from .oseledets import (SpectrumReport, SplittingReport, classify_good_block, estimate_spectrum,
                        fast_space, slow_space, splitting)

__version__ = "0.1.0"
