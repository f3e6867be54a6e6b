"""Robust approximate Bayesian computation with adjustment components.

Also provides the comparators used to benchmark it: ABC-SMC with and without
regression adjustment, Gaussian synthetic likelihood and its robust mean and
variance adjusted variants.
"""

from .distributions import JointPrior, RandomStream
from .errors import RabcError
from .robust import RabcResult, run_rabc
from .summaries import Partition

__version__ = "0.1.0"

__all__ = ["JointPrior", "Partition", "RabcError", "RabcResult", "RandomStream", "run_rabc", "__version__"]
