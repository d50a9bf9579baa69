"""flowfuse: flow-matching multi-modal image fusion with prior-guided
pseudo-labels and continual learning across fusion tasks."""

__version__ = "0.1.0"
