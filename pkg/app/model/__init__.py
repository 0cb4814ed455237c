"""Grading network: multiway attention and the end-to-end model."""
