"""Financial knowledge graph pipeline: report ingestion, attribute and event extraction,
quality-control refinement, two-stage graph retrieval, signal generation and backtesting."""

__version__ = "0.1.0"
