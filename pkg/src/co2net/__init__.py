"""Two-period CO2 pipeline network planning under scenario uncertainty.

Raster routing of candidate corridors, a piecewise-linear pipeline cost model,
perfect-information, successive-information and min-max regret MILPs, and the
cost/regret reporting around them.
"""

__version__ = "0.1.0"
