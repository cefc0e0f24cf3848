"""Rover navigation lab: terrain, skid-steer kinematics, a goal-navigation MDP,
PPO training, and zero-shot cross-domain evaluation."""

__version__ = "0.1.0"
