"""Charge retrieval from quantum batteries after thermal operations, with bath and reference assistance."""

__version__ = "0.1.0"
