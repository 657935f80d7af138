"""Streaming false-trigger mitigation toolkit.

A per-frame LSTM classifier scores how device-directed an utterance
looks as audio arrives; knowledge transfer from a lattice-embedding
teacher sharpens those scores; accept/reject policies convert the score
stream into early decisions; and evaluation utilities measure the
accuracy/latency trade-off.
"""

__version__ = "0.1.0"
