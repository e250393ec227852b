"""Coordinated multi-market bidding for battery storage.

Library + CLI that estimates a Markov price lattice from day-ahead,
intraday and frequency-reserve price history, trains a bidding policy by
stochastic dual dynamic programming, and simulates/report its trading
performance.
"""

__version__ = "0.1.0"
