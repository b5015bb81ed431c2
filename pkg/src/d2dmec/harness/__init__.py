"""Experiment engine, validation oracles and the command-line front end."""
