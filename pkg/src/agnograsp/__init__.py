"""Gripper-agnostic grasping toolkit: kinematics with semantic keypoints,
interaction bisector surfaces, a finger-token policy network, learned and
optimization-based adaptation, metrics and benchmarks."""

__version__ = "0.1.0"
