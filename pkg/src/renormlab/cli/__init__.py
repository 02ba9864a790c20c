"""Configuration, orchestration, manifests and reports."""
