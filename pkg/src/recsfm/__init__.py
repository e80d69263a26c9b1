"""recsfm: recurrent refinement of dense depth and camera poses.

A small CPU stack for multi-view scene reconstruction: a from-scratch
reverse-mode tensor engine, pinhole/SE(3) geometry, a feature-metric cost,
a convolutional GRU that alternately updates depth and poses, supervised and
self-supervised losses, evaluation metrics, a synthetic scene generator, and
a command-line interface tying it together.
"""

__version__ = "0.1.0"
