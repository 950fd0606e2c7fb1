"""Simulation and verification toolkit for fading-memory delay systems over minimal flows.

Subpackages:

- :mod:`fadeflow.history` — truncated phase space, compact-open metric,
  exponential order cone, variation functionals and envelopes;
- :mod:`fadeflow.baseflow` — torus rotation base flow and quasi-periodic
  coefficients;
- :mod:`fadeflow.fde` — structured functional equations: integrator,
  monotonicity / stability / continuity / recurrence probes;
- :mod:`fadeflow.neutral` — stable neutral operators, convolution images and
  their inversion, neutral integration in two equivalent pipelines;
- :mod:`fadeflow.models` — curated model families and the hypothesis audit;
- :mod:`fadeflow.cli` — config-driven command line.
"""

from .baseflow import BasePoint, MatrixCoefficient, TorusBase, TrigCoefficient, VectorCoefficient
from .fde import FdeModel, Trajectory, integrate
from .history import HistoryFunction, OrderParams, compact_metric, exp_order_le
from .neutral import NeutralOperator, NfdeModel, integrate_nfde

__version__ = "0.1.0"

__all__ = [
    "BasePoint",
    "MatrixCoefficient",
    "TorusBase",
    "TrigCoefficient",
    "VectorCoefficient",
    "FdeModel",
    "Trajectory",
    "integrate",
    "HistoryFunction",
    "OrderParams",
    "compact_metric",
    "exp_order_le",
    "NeutralOperator",
    "NfdeModel",
    "integrate_nfde",
    "__version__",
]
