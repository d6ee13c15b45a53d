"""Discrete-choice models of directed network formation."""
from .kernels import BACKEND, available_backends, set_backend
from .model import (
    Alternative,
    ChoiceSequence,
    ChoiceSituation,
    Dataset,
    Family,
    FitResult,
    MixingSpec,
    ThetaVector,
    read_dataset,
    validate_dataset,
    write_dataset,
)

__version__ = "0.1.0"
