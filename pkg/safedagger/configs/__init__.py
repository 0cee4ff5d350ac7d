"""Shipped run configuration presets."""
