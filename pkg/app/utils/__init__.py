"""Shared helpers: event logging and seed derivation."""
