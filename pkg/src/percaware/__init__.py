"""Perception-aware path planning."""
