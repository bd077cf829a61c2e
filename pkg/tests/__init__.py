"""Tests for the NonSticky Euler-Maruyama laboratory."""
