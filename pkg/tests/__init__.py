"""Tests for codert."""
