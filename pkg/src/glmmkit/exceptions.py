"""Exception hierarchy shared across the package.

Every error raised by the public API carries a ``category`` attribute so the
command line front end can emit machine readable error reports.  Categories:

* ``config``      bad model specification or invalid arguments
* ``ingestion``   CSV or config files that cannot be turned into model data
* ``estimation``  optimizer or mode-finding failures
* ``singularity`` matrices that cannot be inverted or factored
* ``degenerate``  requests that are statistically meaningless as posed
"""

from __future__ import annotations


class GlmmKitError(Exception):
    """Base class for all package errors."""

    category = "config"


class ConfigError(GlmmKitError, ValueError):
    category = "config"


class ShapeError(ConfigError):
    """Array arguments whose dimensions do not line up."""


class DomainError(ConfigError):
    """Numeric arguments outside the mathematical domain of an operation."""


class IngestionError(GlmmKitError, ValueError):
    category = "ingestion"


class EstimationError(GlmmKitError, RuntimeError):
    category = "estimation"


class SingularityError(GlmmKitError, RuntimeError):
    category = "singularity"


class DegenerateError(GlmmKitError, RuntimeError):
    category = "degenerate"
