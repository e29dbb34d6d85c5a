"""Figure rendering for experiment trace CSVs and boundary grids."""

__version__ = "0.1.0"
