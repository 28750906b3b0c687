"""Experiment command handlers and result writers."""
