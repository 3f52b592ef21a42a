"""Unit tests for simulator components."""
