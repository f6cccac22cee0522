"""Multi-agent deep reinforcement learning for joint subband and power allocation.

Modules: ``channel`` (deployments and fading), ``env`` (rates, neighbour
sets, states and rewards), ``neural`` (numpy MLPs and Adam), ``agents``
(two-layer and joint learners), ``baselines`` (FP and random allocation),
``harness`` (training, testing, tables) and ``cli``.
"""

__version__ = "0.1.0"
