"""Query-by-example spoken term detection toolkit.

Trains a small residual CNN to produce fixed-dimensional acoustic word
embeddings, detects keyword occurrences in code-switching audio via
sliding-window cosine matching, and ships a subsequence-DTW baseline.
"""

__version__ = "0.1.0"
