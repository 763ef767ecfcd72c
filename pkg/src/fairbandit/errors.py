"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: config/schema/IO problems
exit 2, data-validation problems exit 3, anything else exit 1.
"""


class FairbanditError(Exception):
    """Base class for all package errors."""


class ConfigError(FairbanditError):
    """Invalid or inconsistent configuration value."""


class SchemaError(ConfigError):
    """CSV schema does not match the file (missing column, bad role)."""


class IngestionError(FairbanditError):
    """A concrete row could not be ingested (e.g. unmapped category)."""


class DataError(FairbanditError):
    """Logged data violates an estimator precondition (e.g. zero propensity)."""


class StateError(FairbanditError):
    """Operation called before its required state exists (e.g. unfit model)."""
