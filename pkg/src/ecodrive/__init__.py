"""Closed-loop eco-driving lab: GRU-ED target prediction with receding-horizon DP control."""

__version__ = "0.1.0"
