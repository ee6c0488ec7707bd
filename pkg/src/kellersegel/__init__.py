"""Finite elements for the parabolic-elliptic Keller-Segel system."""
