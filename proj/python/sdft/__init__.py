"""Python bindings for the self-distillation fine-tuning laboratory."""

from ._sdft import (
    Policy,
    mapping_instances,
    normalized_score,
    pass_at_k,
    run,
    stepwise_kl,
)

__all__ = ["Policy", "mapping_instances", "normalized_score", "pass_at_k", "run", "stepwise_kl"]
