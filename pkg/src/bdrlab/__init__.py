"""Boundary-localization estimation lab: synthetic signals, distance-field
regression vs classification-peak estimators, variance-scaling experiments,
adaptive-depth cost modelling and regression-calibration metrics."""

__version__ = "0.1.0"
