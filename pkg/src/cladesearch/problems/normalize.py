"""Map raw objective scores to Beta outcomes in [0, 1].

The running 90th percentile acts as the success ceiling and the running
minimum as the floor.  Until enough history accumulates (or while the two
coincide) the normalizer returns the neutral 0.5, which avoids degenerate
all-win or all-loss beliefs in the opening evaluations.
"""

from __future__ import annotations

import numpy as np

MIN_HISTORY = 5
PERCENTILE = 90.0


class Normalizer:
    """Single-writer running normalizer; `observe` mutates, `preview` does not."""

    def __init__(self, mode: str = "fractional"):
        if mode not in ("fractional", "binary"):
            raise ValueError(f"mode must be 'fractional' or 'binary', got {mode!r}")
        self.mode = mode
        self.history: list = []

    def preview(self, raw_score: float) -> float:
        """Outcome this raw score would map to under the current history."""
        if len(self.history) < MIN_HISTORY:
            return 0.5
        floor = min(self.history)
        p90 = float(np.percentile(self.history, PERCENTILE))
        if p90 <= floor:
            return 0.5
        if self.mode == "binary":
            return 1.0 if raw_score >= p90 else 0.0
        return float(np.clip((raw_score - floor) / (p90 - floor), 0.0, 1.0))

    def observe(self, raw_score: float) -> float:
        """Append to history, then normalize against the updated history."""
        self.history.append(float(raw_score))
        return self.preview(raw_score)
