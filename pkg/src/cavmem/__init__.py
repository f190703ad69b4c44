"""Optimal control drives and efficiencies for cavity-assisted quantum memories."""
__version__ = "0.1.0"
