"""QMIX-lite and MATD3-lite with configurable parameter sharing."""
from .config import MATD3Config, QMIXConfig
from .loop import MetricsTrace, train
from .matd3 import MATD3Learner
from .qmix import QMIXLearner
from .schemes import SCHEMES, build_scheme, scheme_spec

__all__ = ["MATD3Config", "QMIXConfig", "MetricsTrace", "train", "MATD3Learner", "QMIXLearner",
           "SCHEMES", "build_scheme", "scheme_spec"]
