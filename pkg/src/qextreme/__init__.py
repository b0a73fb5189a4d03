"""Power-law tails and extreme events from nonlinear quantum dissipation."""

__version__ = "0.1.0"
