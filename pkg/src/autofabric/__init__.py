"""Discrete-event simulation of an execute-order-validate blockchain with learned controllers."""

__version__ = "0.1.0"
