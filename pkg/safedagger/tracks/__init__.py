"""Shipped TrackSpec files (7 train, 3 test)."""
