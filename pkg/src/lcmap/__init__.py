"""lcmap: location-specific lane-change probability maps from fleet trajectories."""

__version__ = "0.1.0"
