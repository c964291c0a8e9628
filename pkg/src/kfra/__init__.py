"""Knowledge-augmented fine-grained visual reasoning engine."""

__version__ = "0.1.0"
