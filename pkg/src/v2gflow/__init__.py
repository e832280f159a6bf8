"""Joint OPF + V2G scheduling as a MISOCP, solved exactly or via a two-stage
difference-of-convex / trust-region pipeline."""

__version__ = "0.1.0"
