"""Certified Maxwellian and stretched-exponential lower bounds for Boltzmann solutions."""

from .certificate import Certificate
from .cutoff import CascadeConfig, certify_cutoff
from .kernel import CollisionKernel, hard_spheres, maxwell_molecules, power_law_kernel
from .bounds import AprioriBounds
from .noncutoff import ScheduleConfig, certify_noncutoff
from .upheaval import DeltaRule, UniversalConstants

__version__ = "0.1.0"
