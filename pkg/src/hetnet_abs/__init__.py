"""Joint macro blanking and fractional user association for heterogeneous cellular networks."""

__version__ = "0.1.0"
