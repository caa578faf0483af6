"""Physics-informed neural networks for coolant velocity estimation in a
multilayer MOSFET heat sink."""

__version__ = "0.1.0"
