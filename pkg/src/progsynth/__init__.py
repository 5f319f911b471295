"""MCMC synthesis of probabilistic model programs in two small languages:
composable GP covariance kernels for time series and column-partition
mixtures for tabular data."""

__version__ = "0.1.0"
