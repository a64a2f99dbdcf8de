"""Channel-robust spoofing countermeasures: data simulation, training and evaluation."""

__version__ = "0.1.0"
