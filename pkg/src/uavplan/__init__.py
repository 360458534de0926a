"""Probabilistically safe multi-UAV trajectory planning under non-Gaussian noise.

The package plans trajectories for a team of UAVs whose control channels
carry additive non-Gaussian disturbances.  Instead of sampling, it
propagates exact state moments through the nonlinear dynamics, bounds
inter-vehicle collision probabilities with a one-sided concentration
inequality, and plans receding-horizon trajectories for each vehicle in
sequence against the broadcast moment plans of its teammates.
"""

__version__ = "0.1.0"
