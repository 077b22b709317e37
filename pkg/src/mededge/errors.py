"""Exception hierarchy shared by every mededge module.

The CLI maps these onto its exit-code contract: usage problems exit 1,
data/input problems exit 2, bundle integrity problems exit 3.
"""

from __future__ import annotations


class MedEdgeError(Exception):
    """Base class for all mededge errors."""


class DimensionError(MedEdgeError):
    """Tensor/layer shapes do not conform; message names the layer."""


class NumericError(MedEdgeError):
    """Non-finite values where finite ones are required."""


class GraphError(MedEdgeError):
    """Graph construction, mode or trace-consistency violation."""


class InputError(MedEdgeError):
    """Caller-supplied data is invalid (unknown symptoms, bad request...).

    `offenders` optionally lists the offending names/fields.
    """

    def __init__(self, message: str, offenders: list[str] | None = None):
        super().__init__(message)
        self.offenders = offenders or []


class DataError(MedEdgeError):
    """Dataset or record-file level problem (empty set, bad record...)."""


class QuantizationError(MedEdgeError):
    """Quantization failed; message names the offending element index."""


class IntegrityError(MedEdgeError):
    """A bundle or checkpoint failed verification.

    `violations` carries the individual findings (see modelpack.Violation).
    """

    def __init__(self, message: str, violations: list | None = None):
        super().__init__(message)
        self.violations = violations or []


class TrainingAborted(MedEdgeError):
    """Training stopped because of non-finite gradients; message carries
    the parameter name and step for diagnosis."""


class UnsupportedModelError(MedEdgeError):
    """The model lacks the structure an operation needs (e.g. no hidden
    layer to extract embeddings from)."""
