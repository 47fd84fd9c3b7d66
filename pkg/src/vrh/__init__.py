"""Variable-range hopping: random walks on marked point sets, resistor-network
lower bounds, coarse-grained percolation, and low-temperature scaling runs."""

__version__ = "0.1.0"
