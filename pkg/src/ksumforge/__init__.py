"""Generalized-birthday solvers, sparse-to-dense reductions and a verification harness."""

from .core import (
    InvariantViolation,
    MSumInstance,
    Oracle,
    ParameterError,
    SeededRng,
    SumInstance,
    XorInstance,
    checked_oracle,
    gen_msum_instance,
    gen_sum_instance,
    gen_xor_instance,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "InvariantViolation",
    "MSumInstance",
    "Oracle",
    "ParameterError",
    "SeededRng",
    "SumInstance",
    "XorInstance",
    "checked_oracle",
    "gen_msum_instance",
    "gen_sum_instance",
    "gen_xor_instance",
    "validate",
]
