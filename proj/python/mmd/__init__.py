"""Python access to the mmd survival-fusion core."""

from ._mmd import (
    DataError,
    Error,
    NumericalError,
    UsageError,
    concordance_index,
    cox_loss,
    cox_loss_grad,
    footprint,
    generate_synthetic,
    gradcheck,
    modalities,
    modality_dropout,
    run_cli,
)

__all__ = [
    "DataError",
    "Error",
    "NumericalError",
    "UsageError",
    "concordance_index",
    "cox_loss",
    "cox_loss_grad",
    "footprint",
    "generate_synthetic",
    "gradcheck",
    "modalities",
    "modality_dropout",
    "run_cli",
]
