from .core import (
    ComputationRecord,
    Function,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    default_dtype,
    precision,
)
from .gradcheck import GradCheckReport, NonDeterministicFunctionError, grad_check
from . import ops
