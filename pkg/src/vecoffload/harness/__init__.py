"""Command line, experiment plans, metrics and plot-data output."""
