"""Cascade tree modelling: tree construction, brick features, a from-scratch
LSTM classifier, a conditional-distribution generator and an LSTM-filtered
generative test."""

__version__ = "0.1.0"
