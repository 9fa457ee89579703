"""Mean first passage times with stationary and moving traps.

The package solves the MFPT problem ``D lap u = -1`` in planar domains with
absorbing circular traps on a uniform grid using closest-point extensions,
handles traps that move periodically, optimises trap layouts, and provides
closed-form asymptotic results for cross-checking.
"""
from .errors import *  # noqa: F401,F403
from .geometry import (Disk, Ellipse, EllipseOrbitTrap, Rectangle, RingOrbitTrap, Star,
                       StationaryTrap, closest_point, mirror_point, star_cp, trap_center)
from .band import BoundaryData, build_band, build_extension_ops, interp_row
from .operators import assemble_parabolic, assemble_rotating_elliptic, laplacian_5pt, upwind_switch
from .quadrature import average, average_periodic, build_weights
from .solver import relax_periodic, solve_rotating_frame, solve_stationary, step
from . import asymptotics, optimize  # noqa: E402

__version__ = "0.1.0"
