"""Pilot-wave relaxation simulations.

Thin Python surface over the C++ core: wave-field evaluation, de Broglie
trajectory integration, density transport with coarse-grained H curves,
expanding-space mode evolution, angular power spectra with cosmic-variance
statistics, and |Psi|^p typicality sampling.
"""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
