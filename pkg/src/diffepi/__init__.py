"""diffepi: a fully transparent, end-to-end differentiable agent-based
epidemic simulator with z-score output scaling, gradient calibration, a
discrete reference model, and sensitivity-analysis tooling."""

__version__ = "0.1.0"
