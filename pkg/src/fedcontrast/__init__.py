"""Federated semi-supervised learning with a contrastive online/target
network: labeled data at the server, unlabeled data at the clients.

The package is a plain numpy library.  Typical entry points:

* :func:`fedcontrast.experiment.run_experiment` — full federated run;
* :mod:`fedcontrast.cli` — the ``fedcontrast`` command (run/resume/sweep/plot);
* :mod:`fedcontrast.models`, :mod:`fedcontrast.server`,
  :mod:`fedcontrast.client`, :mod:`fedcontrast.federation` — the protocol
  pieces, usable individually (see ``demos/``).
"""

from .config import ExperimentConfig, parse_config
from .experiment import run_experiment, run_sweep

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "run_sweep"]
__version__ = "0.1.0"
