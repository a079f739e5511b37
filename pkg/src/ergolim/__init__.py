"""Time-averaging estimators of ergodic limits for discretized SDEs, SPDEs and SFDEs."""
__version__ = "0.1.0"
