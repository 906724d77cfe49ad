"""Tests package for the Orchestra simulator."""
