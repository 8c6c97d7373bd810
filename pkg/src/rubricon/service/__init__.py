"""Command-line pipeline and HTTP review service."""
