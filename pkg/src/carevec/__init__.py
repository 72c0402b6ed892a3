"""Patient, visit, and medical-code representation learning from claims data."""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
COHORT_SCHEMA_VERSION = 1
