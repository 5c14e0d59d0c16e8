"""notematch: deterministic patient-note identification pipeline."""

__version__ = "0.1.0"
