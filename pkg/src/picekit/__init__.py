"""Path integral stochastic optimal control: Feynman-Kac estimators, PICE learning and RPIIS smoothing."""

__version__ = "0.1.0"
