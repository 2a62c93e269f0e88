"""Command line runs, metric files and cross-run summaries."""
