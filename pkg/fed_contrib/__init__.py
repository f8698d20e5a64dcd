"""Fed Contrib Sim - class-specific contribution assessment for federated learning"""

__version__ = "0.1.0"
