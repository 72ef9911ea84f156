"""
Mixing regularizers, imbalance tooling and the NumPy training engine
"""
