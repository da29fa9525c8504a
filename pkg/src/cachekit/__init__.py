"""Caching analysis toolkit: popularity models, traces, eviction policies,
online caching, caching networks and grid scaling laws."""

__version__ = "0.1.0"
