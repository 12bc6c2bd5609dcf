"""Evaluation harness: metrics, batch baseline, data generator, experiments and CLI."""
