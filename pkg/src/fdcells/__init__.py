"""Queue-aware scheduling for multicell full-duplex networks with energy
harvesting small cells: scenario generation, channels, rate models, convex
restrictions, an interior-point solver, consensus ADMM and experiment runs."""

__version__ = "0.1.0"
