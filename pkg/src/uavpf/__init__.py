"""Proportional-fair trajectory planning and radio resource management for a UAV base station."""
