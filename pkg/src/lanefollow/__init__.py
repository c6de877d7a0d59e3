"""Lane-following detectors, controllers and a closed-loop simulator."""

__version__ = "0.1.0"
