"""World-frame multi-person trajectory recovery from monocular video inputs.

The package takes per-frame camera-frame pose estimates, scale-ambiguous
relative camera poses, and 2D keypoint detections, and solves a staged
energy minimization for world trajectories, the camera scale, and the
ground plane. It also ships the synthetic-scene oracle, evaluation
metrics, and a world-frame tracking-cue harness used by the test suite.
"""

__version__ = "0.1.0"
