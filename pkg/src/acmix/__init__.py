"""Spectral laboratory for the 1D stochastic Allen-Cahn equation with localized noise.

Submodules
----------
spectral       sine basis, window basis and the localized input operators
dynamics       IMEX time stepping, deterministic and stochastic
linearization  tangent flow, discrete adjoint, second variation
gramian        controllability Gramians and regularized stabilization
steady         steady states by shooting and the connecting paths
quasistatic    eigen tracking, pole placement and quasi-static transfer
mixing         control family, irreducibility, rho decay, mixing, moments
"""
__version__ = "0.1.0"

from .dynamics import *  # noqa: F401,F403
from .gramian import *  # noqa: F401,F403
from .linearization import *  # noqa: F401,F403
from .mixing import *  # noqa: F401,F403
from .quasistatic import *  # noqa: F401,F403
from .spectral import *  # noqa: F401,F403
from .steady import *  # noqa: F401,F403
