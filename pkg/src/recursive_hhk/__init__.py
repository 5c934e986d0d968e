"""Optimal consumption under recursive utility with satisfaction-dependent felicity."""
