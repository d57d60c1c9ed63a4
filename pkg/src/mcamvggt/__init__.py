"""Multi-camera feed-forward geometry transformer on synthetic driving scenes."""
from .errors import MCamError
from .geometry import CameraIntrinsics, CameraRig, PoseSE3, RigCamera

__version__ = "0.1.0"

__all__ = ["MCamError", "CameraIntrinsics", "CameraRig", "PoseSE3", "RigCamera", "__version__"]
