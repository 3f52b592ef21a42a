"""Unit and acceptance tests for the phase-field simulator."""
