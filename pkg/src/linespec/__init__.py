"""Line-spectrum estimation with a learned pseudo-spectrum network and
classical baselines."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
