"""Energy- and carbon-aware benchmarking of network anomaly detectors."""

__version__ = "0.1.0"
