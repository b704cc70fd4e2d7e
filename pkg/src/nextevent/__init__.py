"""LSTM next-event prediction for business process event logs."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .eventlog import Event, EventLog, TokenSchema, Trace, encode, parse_csv, parse_xes, read_log  # noqa: E402
from .training import TrainedModel, TrainingConfig, cross_validate, fit  # noqa: E402
from .vocab import Vocabulary, build_vocabulary  # noqa: E402

__all__ = [
    "BACKEND",
    "Event",
    "EventLog",
    "TokenSchema",
    "Trace",
    "encode",
    "parse_csv",
    "parse_xes",
    "read_log",
    "TrainedModel",
    "TrainingConfig",
    "cross_validate",
    "fit",
    "Vocabulary",
    "build_vocabulary",
]
