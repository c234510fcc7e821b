# Mean field game master equation laboratory
__version__ = "0.4.0"
