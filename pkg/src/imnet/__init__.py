"""Copy-move forgery detection with prototype iteration and inconsistency mining."""

from .config import RunConfig
from .model import forward, init_params, predict

__all__ = ["RunConfig", "forward", "init_params", "predict"]
__version__ = "0.1.0"
