"""Policy learning that generalizes from selection-biased training data."""

__version__ = "0.1.0"
