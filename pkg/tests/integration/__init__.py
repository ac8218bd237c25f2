"""Integration tests for codert."""
