"""muslab: unit-scaled FP8 transformer training at desk scale."""

__version__ = "0.1.0"
