"""munlab: a desk-scale goal-conditioned model-based RL laboratory.

Everything runs on hand-written float64 MLP numerics (forward, backward,
Adam) over a small compiled kernel core with a pure-numpy fallback.  The
package provides three toy goal-reaching environments, a split replay buffer
with a directional-coverage metric, a deterministic dynamics ensemble with
imagination rollouts, a temporal-distance network, subgoal selection
strategies, a Dreamer-style goal-conditioned actor-critic trained in
imagination, and an orchestrator with training loop, baselines, evaluation
protocols, checkpointing, and a CLI.
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
