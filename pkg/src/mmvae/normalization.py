"""Per-dimension min/max scaling into [-1, 1]."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Normalization:
    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, rows):
        rows = np.asarray(rows, dtype=float)
        return cls(rows.min(axis=0), rows.max(axis=0))

    @property
    def span(self):
        return self.maxs - self.mins

    def _cols(self, cols):
        return (self.mins, self.span) if cols is None else (self.mins[cols], self.span[cols])

    def normalize(self, x, cols=None):
        """Map raw values to [-1, 1]; constant dimensions map to 0."""
        lo, span = self._cols(cols)
        x = np.asarray(x, dtype=float)
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (x - lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def denormalize(self, x, cols=None):
        lo, span = self._cols(cols)
        return lo + (np.asarray(x, dtype=float) + 1.0) * 0.5 * span

    def to_dict(self):
        return {"min": [float(v) for v in self.mins], "max": [float(v) for v in self.maxs]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
