"""CLI scripts for the kinetic transport solver suite."""
