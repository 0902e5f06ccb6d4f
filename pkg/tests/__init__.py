"""Tests for the ambit package."""
