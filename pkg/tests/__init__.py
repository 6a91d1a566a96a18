"""
Tests for vicount
"""
