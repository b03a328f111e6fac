"""Multi-subject non-invasive glucose regression: sensor alignment, Mix-up
balancing, mixed-model feature selection and MMD-weighted meta-forests."""

__version__ = "0.1.0"
