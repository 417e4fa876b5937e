"""Tests for core_morse_sturm package."""
