"""Continual test-time adaptation with generated adapter parameters.

Thin wrapper over the C++ core: dual-path low-rank domain-aware adapters,
conditional diffusion over adapter parameters, and class-centered optimal
transport alignment, driven over synthetic continual domain-shift streams.
"""

from cttagen._core import (  # noqa: F401
    ArgumentError,
    ConvergenceError,
    DimensionError,
    StateError,
    adapter_loss,
    centering_matrix,
    class_centers,
    corrupt,
    default_config,
    hsic,
    make_schedule,
    offline_train,
    orth_loss,
    ot_loss,
    q_sample,
    run_continual,
    sinkhorn,
    transport_cost,
    __version__,
)

__all__ = [
    "ArgumentError",
    "ConvergenceError",
    "DimensionError",
    "StateError",
    "adapter_loss",
    "centering_matrix",
    "class_centers",
    "corrupt",
    "default_config",
    "hsic",
    "make_schedule",
    "offline_train",
    "orth_loss",
    "ot_loss",
    "q_sample",
    "run_continual",
    "sinkhorn",
    "transport_cost",
    "__version__",
]
