"""
Tests package for csrobust.
"""
