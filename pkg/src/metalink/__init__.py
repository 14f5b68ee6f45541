"""Meta-learning for communication links: learn initializations that adapt
to a new device or channel from a handful of examples.

The package splits into an exact-derivative engine (graph, autodiff), model
and channel primitives (nn, channel), task sampling (tasks), training loops
(learners), verification suites (checks), and experiment orchestration with
a CLI (harness, cli).
"""

from .autodiff import GradientResult, eval_with_gradient, hvp, unrolled_meta_gradient
from .errors import ConfigurationError, NumericalError
from .learners import TrainConfig, maml_adapt, meta_train, sgd_step, train_conventional, train_joint
from .nn import Dataset, ParamVector

__all__ = [
    "ConfigurationError",
    "Dataset",
    "GradientResult",
    "NumericalError",
    "ParamVector",
    "TrainConfig",
    "eval_with_gradient",
    "hvp",
    "maml_adapt",
    "meta_train",
    "sgd_step",
    "train_conventional",
    "train_joint",
    "unrolled_meta_gradient",
]
