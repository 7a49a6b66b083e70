"""Bidirectional pedestrian lane-formation simulator."""
__version__ = "0.1.0"
