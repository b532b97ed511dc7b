"""Forward-pass instrumentation shared by the profiler and the exporters."""

from __future__ import annotations

import numpy as np


class ForwardProbe:
    """Collects per-layer observations during a forward pass.

    The model checks for an attached probe and feeds it three kinds of
    records: mean input-spike probabilities keyed by cost-layer name, raw
    binary spike tensors from inside encoder blocks (token-aligned, for the
    firing-rate maps), and per-block attention score tensors.
    """

    def __init__(self, *, record_rates: bool = True, record_block_spikes: bool = False, record_scores: bool = False):
        self.record_rates = record_rates
        self.record_block_spikes = record_block_spikes
        self.record_scores = record_scores
        self.rates: dict[str, float] = {}
        self.block_spikes: list[tuple[str, np.ndarray]] = []
        self.scores: list[tuple[str, np.ndarray]] = []

    def rate(self, name: str, spikes: np.ndarray) -> None:
        if self.record_rates:
            self.rates[name] = float(spikes.mean())

    def spikes(self, name: str, spikes: np.ndarray) -> None:
        if self.record_block_spikes:
            self.block_spikes.append((name, spikes.copy()))

    def attention(self, name: str, scores: np.ndarray) -> None:
        if self.record_scores:
            self.scores.append((name, scores.copy()))
