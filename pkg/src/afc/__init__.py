"""Direct adaptive feedforward cancellation of multi-sinusoidal disturbances.

Library + experiment CLI for rejecting sinusoidal disturbances with known
frequencies acting on an unknown stable discrete-time LTI plant: joint
recursive identification of the plant and of the residual disturbance
parameters, feedforward synthesis with Ridge leakage, shaped excitation,
and a full closed-loop simulator with spectrum reporting.
"""

__version__ = "0.1.0"
