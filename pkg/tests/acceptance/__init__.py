"""Long-running end-to-end checks."""
