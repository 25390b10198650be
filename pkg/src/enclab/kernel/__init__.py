"""Two-layer fundamental solution."""
