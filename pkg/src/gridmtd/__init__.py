"""False-data-injection attacks and moving-target defenses on grid state estimation."""

__version__ = "0.1.0"
