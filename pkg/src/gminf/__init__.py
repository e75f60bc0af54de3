"""Infinite-server queue with FIFO-/LIFO-batch departures and its growth-collapse fluid limit."""

__version__ = "0.1.0"
