"""Trajectory-response prediction for mixed crowds of agents and machines.

Predicts how non-controlled agents (pedestrians, livestock, ...) will move
in response to a controlled machine's planned path, and answers what-if
queries for alternative plans.  Submodules:

* ``trajdata``     — recordings, resampling, standardization, windowing
* ``stgraph``      — the unrolled spatio-temporal interaction graph
* ``neural``       — numpy layers with hand-written backward passes
* ``responsernn``  — the factored edge/node recurrent model
* ``baselines``    — kinematic extrapolation and an encoder-decoder
* ``synthgen``     — synthetic interaction scenes
* ``evalkit``      — displacement errors and experiment reports
* ``formats``      — scenario / rollout / checkpoint serialization
* ``service``      — HTTP what-if API (requires fastapi)
* ``cli``          — command-line front end
"""

__version__ = "1.0.0"

from .configs import ModelConfig, TrainConfig
from .trajdata import (
    Dataset,
    SequenceWindow,
    StandardizationStats,
    load_dataset,
)

__all__ = [
    "__version__",
    "Dataset",
    "ModelConfig",
    "SequenceWindow",
    "StandardizationStats",
    "TrainConfig",
    "load_dataset",
]
