"""E-graph construction planned by parallel Monte Carlo Tree Search."""
