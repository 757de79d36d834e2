"""SAS Kit - structure-aware serialization, spectral alignment and drift benchmarks for point clouds."""

__version__ = "0.1.0"
__author__ = "SAS Kit Contributors"
