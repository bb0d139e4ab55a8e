"""gaitroa: regions of attraction for parameterized gaits of a two-link walker.

Layers, bottom to top: hybrid walker dynamics; a library of torque-efficient
gaits indexed by the desired post-impact stance angle beta; a grid solver for
the reset-constrained value function (the oracle); a sinusoidal network trained
against the same equations; a one-step predictive controller driven by the
learned values; a gait-switching rule; and an experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .dynamics import RobotParams, ResetEvent  # noqa: F401
