"""Joint caching and routing in networks of caches."""
from .kernels import BACKEND
from .netmodel import (FractionalState, InfeasibleStateError, InstanceFormatError,
                       IntegralStrategy, ProblemInstance, RequestEvent,
                       StrategyIndexError, feasible_fractional, feasible_integral,
                       read_instance, validate_instance, write_instance)
from .objective import (SubgradientPair, c0_sr, cost_sr, exact_subgradient_L_sr,
                        gain_sr, surrogate_L_sr)

__version__ = "0.1.0"
