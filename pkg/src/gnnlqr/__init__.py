"""Graph neural network controllers for distributed linear-quadratic control."""

__version__ = "0.1.0"
