# Remix Imbalance Lab Test Suite
# Run with: python -m unittest discover tests

__version__ = "1.0.0"
