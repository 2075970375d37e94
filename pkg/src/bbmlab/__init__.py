"""bbmlab: branching Brownian motion with an expanding-ball activity rule.

A particle system where every particle diffuses, splits in two at an
exponential rate, and counts as active at time t only if its whole
ancestral path has stayed inside the centered ball of radius r(t). The
package pairs a Monte Carlo engine for the particle counts with the
analytic quantities they should match: expected-mass formulas, large
deviation rates for the subdiffusive regime, and the confinement
eigenvalue that governs the law-of-large-numbers correction.
"""

from . import analytic, engine, estimators, model
from .model import ModelParams, RadiusSchedule

__version__ = "0.1.0"

__all__ = ["analytic", "engine", "estimators", "model", "ModelParams", "RadiusSchedule", "__version__"]
