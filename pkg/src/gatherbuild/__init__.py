"""Gather-and-build gridworld economy with periodic bracketed taxation.

Agents move on a 2D grid, collect wood and stone, trade them on a continuous
double auction, and build houses for coin. A social planner sets marginal tax
rates per income bracket each tax period; collected taxes are redistributed
lump-sum. Subpackages cover the environment, tax controllers, welfare metrics,
two-level PPO training, replay/analysis tooling, and a real-time server for
human play.
"""

__version__ = "0.1.0"
