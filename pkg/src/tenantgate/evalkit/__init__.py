"""Deterministic evaluation kit: workload generation, experiments, reports."""
