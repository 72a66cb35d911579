"""Synthetic designs and Monte Carlo checks."""

from .dgp import CENTRAL_POINT, DgpSpec, dgp_by_name, generate

__all__ = ["DgpSpec", "generate", "dgp_by_name", "CENTRAL_POINT"]
