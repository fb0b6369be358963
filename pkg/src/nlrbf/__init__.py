"""Local Lagrange kernel discretization of volume-constrained nonlocal diffusion."""
__version__ = "0.1.0"
