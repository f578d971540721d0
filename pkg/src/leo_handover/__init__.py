"""LEO satellite handover simulator with Nash soft actor-critic agents."""

__version__ = "0.1.0"
