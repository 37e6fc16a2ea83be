"""Nash equilibria of finite-player and graphon linear-quadratic Volterra games."""

__version__ = "0.1.0"
