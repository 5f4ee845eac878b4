"""dn-stein - discrete multivariate normal approximation toolkit."""

__version__ = "0.1.0"
__author__ = "dn-stein developers"
__email__ = "dn-stein@example.com"
