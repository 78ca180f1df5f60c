"""Configuration, optimization, checkpoints and training loops."""
