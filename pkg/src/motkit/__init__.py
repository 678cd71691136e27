"""Online multi-object tracking with a single shared motion/affinity network."""

__version__ = "0.1.0"
