"""Numerical laboratory for sub-Riemannian end-point maps, extremals and distances."""
from .errors import *  # noqa: F401,F403
from .srgeom import (PolyFrame, Jet2, BracketReport, preset, eval_jet, lie_bracket,
                     bracket_span, pre_medium_fat_scan)
from .flow import Control, TrajectoryBundle, integrate, energy, resample

__version__ = "0.1.0"
