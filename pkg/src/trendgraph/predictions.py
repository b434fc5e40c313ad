"""Score matrices produced by the model or a baseline, plus ranked tag lists."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictionMatrix:
    """Per-pair scores in [0, 1] for one target month.

    ``ranked_lists`` may carry explicit per-community rankings (the MOM
    baseline emits its top lists directly); otherwise rankings derive from
    the scores, descending with ties broken by ascending attribute index.
    """

    scores: np.ndarray
    target_month: int
    ranked_lists: list[list[int]] | None = None

    def __post_init__(self) -> None:
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("prediction scores must lie in [0, 1]")

    def top_lists(self, n: int) -> list[list[int]]:
        if self.ranked_lists is not None:
            return [lst[:n] for lst in self.ranked_lists]
        out = []
        n_attributes = self.scores.shape[1]
        for row in self.scores:
            order = np.lexsort((np.arange(n_attributes), -row))
            out.append([int(j) for j in order[:n]])
        return out
