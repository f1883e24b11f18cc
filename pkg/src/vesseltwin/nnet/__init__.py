"""Numpy graph encoder with hand-written backward passes."""
