"""Decentralized personalized federated learning with budgeted greedy collaborator selection."""

__version__ = "0.1.0"
