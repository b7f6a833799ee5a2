"""Graph neural network with action-attending pooling for skeleton sequences."""
from .config import ConfigError, TrainConfig
from .model import A2GNN

__all__ = ["A2GNN", "ConfigError", "TrainConfig"]
__version__ = "0.1.0"
