"""Multi-scale dynamic fusion and key-point attention for aerial object detection, on a small NumPy autodiff kernel."""

__version__ = "0.1.0"
