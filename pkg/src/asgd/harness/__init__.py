"""Experiment orchestration, reports and the command-line interface."""
