"""PAPR-aware multicarrier downlink precoding via semidefinite relaxation.

Library layout:
  model      channels, symbols, the effective frequency-space operator
  waveform   PAPR measurement, CCDF curves, clipping
  qcqp       constraint builders and the conic problem container
  conic      the interior-point solver
  rounding   rank-one extraction from relaxed solutions
  robust     channel-uncertainty variants and their validation oracles
  multicell  intercell-coordination scenarios
  baselines  reference methods (unconstrained power minimum, peak-regularized
             least squares, per-antenna constant envelope)
  bench      experiment harness behind the ``paprsdr`` CLI
"""

__version__ = "0.1.0"

from .model import SystemConfig, generate_channel, EffectiveChannel  # noqa: F401
from .qcqp import PaprConstraintSet, SdrProblem, make_p4  # noqa: F401
from .conic import SolverSettings, solve_problem  # noqa: F401
