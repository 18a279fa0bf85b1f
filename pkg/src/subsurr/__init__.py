"""Machine-learned interface surrogates for substructured finite element models."""
__version__ = "0.1.0"
