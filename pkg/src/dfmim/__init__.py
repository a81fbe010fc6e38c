"""Deep functional multiple-index models with an MFCC front end."""

__version__ = "0.1.0"
