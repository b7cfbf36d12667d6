"""Joint discrete-continuous sequence optimization with a risk-seeking policy gradient."""

__version__ = "0.1.0"
