"""Strong H-infinity analysis and fixed-order controller synthesis for
linear time-delay systems in descriptor form."""

from ._native import Controller, Ddae, Plant

__all__ = ["Controller", "Ddae", "Plant"]
