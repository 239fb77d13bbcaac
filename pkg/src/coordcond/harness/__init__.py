"""Reproducible convergence experiments, their outputs and the command-line tool."""
