"""Figures from gramlab experiment CSVs: loss convergence with its
theoretical envelope, width-scaling error plots with a reference slope,
and FC-vs-ResNet depth scans.  Every image ships a JSON sidecar listing
series names, point counts, and axis ranges so figures are
machine-checkable without golden images."""

__version__ = "0.1.0"
