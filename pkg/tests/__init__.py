"""Test suite for Cough Toolbox."""
