"""Facial landmark tokenization, kinematic prediction, and edit evaluation."""

__version__ = "0.1.0"
