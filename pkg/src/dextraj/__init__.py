"""dextraj: turn noisy hand-object interaction trajectories into clean,
physically consistent, robot-executable ones.

The package covers the full pipeline: rigid/point-set geometry, articulated
hand models, procedural grasp synthesis with controlled corruption, a
learned trajectory refiner with its training losses, kinematic retargeting
to robot hands, evaluation metrics, and a lightweight contact environment
for replaying and scoring trajectories.
"""

__version__ = "0.1.0"
