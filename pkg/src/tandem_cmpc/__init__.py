"""Cascaded (CMPC) and single-loop (SMPC) model predictive control of a tandem-rotor helicopter.

Modules: ``lie`` (SO3/SE2(3) maps), ``vehicle`` (truth model, mixer, wind),
``reference`` (flat trajectories, replanning), ``linmodel`` (error-dynamics
Jacobians, ZOH), ``qpsolve`` (dense QP), ``mpc`` (condensed MPC), ``cascade``
(controllers, closed loop), ``harness`` (scenarios, metrics, Monte-Carlo).
"""

__version__ = "0.1.0"
