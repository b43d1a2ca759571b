"""Two-stage Wasserstein distributionally robust MPC for radial distribution grids."""

__version__ = "0.1.0"
