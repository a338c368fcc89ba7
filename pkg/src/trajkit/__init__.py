"""Trajectory prediction evaluation and training toolkit.

Provides the classical ADE/FDE/KDE metrics, the distribution-aware AMD/AMV
metrics built on BIC-selected Gaussian mixtures, a tiny zone-routed
convolutional predictor trained with implicit maximum likelihood estimation,
and a CLI for evaluation, training and metric-sensitivity studies.
"""

__version__ = "0.1.0"
