"""Rigid object trajectories from a moving stereo camera.

Masks are tracked over time and across the stereo pair, the object and
background reconstructions are brought to the rig's metric scale and
refined under the rigid-rig constraint, and the object points are then
expressed in the background frame for every frame.
"""

from .estimators import StereoMaskTracker, StereoRefiner, TrajectoryReconstructor
from .exceptions import InfeasibleError, IoError, NumericalError, ParseError, StereoTrajError
from .geometry import CameraPose, PinholeIntrinsics
from .recon import Reconstruction, load_reconstruction, pair_frames, save_reconstruction
from .refine import refine_reconstruction
from .trajectory import Trajectory, compose_trajectory, export_trajectory

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "InfeasibleError",
    "IoError",
    "NumericalError",
    "ParseError",
    "PinholeIntrinsics",
    "Reconstruction",
    "StereoMaskTracker",
    "StereoRefiner",
    "StereoTrajError",
    "Trajectory",
    "TrajectoryReconstructor",
    "compose_trajectory",
    "export_trajectory",
    "load_reconstruction",
    "pair_frames",
    "refine_reconstruction",
    "save_reconstruction",
]
