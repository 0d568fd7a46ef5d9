"""28-dimensional sensorimotor samples and the mask-augmented training set.

Sample layout (all values normalized to [-1, 1])::

    0:4   q_t      4:8   q_{t-1}
    8:12  v_t     12:16  v_{t-1}
    16    p_t      17    p_{t-1}
    18    s_t      19    s_{t-1}
    20:24 u_t     24:28  u_{t-1}

Unobserved entries carry the flag value -2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import io
from .arm import BabbleTrace
from .errors import InputError
from .normalization import Normalization

SAMPLE_DIM = 28
MASK_VALUE = -2.0

# indices of the 14 per-time-step values inside a sample, ordered (q, v, p, s, u)
T_BLOCK = np.r_[0:4, 8:12, 16, 18, 20:24]
PREV_BLOCK = np.r_[4:8, 12:16, 17, 19, 24:28]
# raw trace column (q0..u3) for each sample entry at t and t-1
SENSORY_T = np.r_[0:4, 8:12, 16, 18]
SENSORY_PREV = np.r_[4:8, 12:16, 17, 19]

SLOTS = {
    "q_t": slice(0, 4), "q_prev": slice(4, 8),
    "v_t": slice(8, 12), "v_prev": slice(12, 16),
    "p_t": slice(16, 17), "p_prev": slice(17, 18),
    "s_t": slice(18, 19), "s_prev": slice(19, 20),
    "u_t": slice(20, 24), "u_prev": slice(24, 28),
}
SAMPLE_COLUMNS = tuple(
    f"{slot}{i}" if stop - start > 1 else slot
    for slot, (start, stop) in ((k, (s.start, s.stop)) for k, s in SLOTS.items())
    for i in range(stop - start)
)


class MaskPattern(enum.IntEnum):
    """The four observation footprints of the augmented training set."""

    COMPLETE = 1
    PREV_ONLY = 2
    VISION_PLUS_PREV_Q = 3
    VISION_ONLY = 4

    @property
    def slots(self):
        return _PATTERN_SLOTS[self]

    @property
    def present(self):
        """Boolean (28,) mask of observed entries."""
        mask = np.zeros(SAMPLE_DIM, dtype=bool)
        for slot in self.slots:
            mask[SLOTS[slot]] = True
        return mask

    @classmethod
    def parse(cls, name):
        key = str(name).lower()
        if key in _ALIASES:
            return _ALIASES[key]
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown mask pattern {name!r}") from None


_PATTERN_SLOTS = {
    MaskPattern.COMPLETE: tuple(SLOTS),
    MaskPattern.PREV_ONLY: ("q_prev", "v_prev", "p_prev", "s_prev", "u_prev"),
    MaskPattern.VISION_PLUS_PREV_Q: ("q_prev", "v_t", "v_prev"),
    MaskPattern.VISION_ONLY: ("v_t", "v_prev"),
}
_ALIASES = {
    "complete": MaskPattern.COMPLETE,
    "prev": MaskPattern.PREV_ONLY,
    "imitation": MaskPattern.VISION_PLUS_PREV_Q,
    "vision": MaskPattern.VISION_ONLY,
}


def make_samples(trace: BabbleTrace):
    """One 28-dim sample per consecutive pair of trace rows."""
    if len(trace) < 2:
        raise InputError(f"need at least 2 trace rows, got {len(trace)}")
    norm = trace.normalized
    return pair_rows(norm[:-1], norm[1:])


def pair_rows(prev, cur):
    """Interleave normalized 14-column rows at t-1 and t into samples."""
    prev = np.atleast_2d(prev)
    cur = np.atleast_2d(cur)
    out = np.empty((len(cur), SAMPLE_DIM))
    out[:, T_BLOCK] = cur
    out[:, PREV_BLOCK] = prev
    return out


def sample_groups(trace: BabbleTrace):
    """Babbling cycle of the t row of every sample."""
    return np.asarray(trace.cycle[1:])


def apply_mask(samples, pattern: MaskPattern):
    out = np.array(samples, dtype=float, copy=True)
    out[..., ~MaskPattern(pattern).present] = MASK_VALUE
    return out


def unmask(inputs, targets):
    """Fill flagged entries of ``inputs`` from ``targets``."""
    return np.where(inputs == MASK_VALUE, targets, inputs)


@dataclass
class AugmentedDataset:
    """Masked inputs paired with complete targets, blocks in pattern order.

    ``origin`` indexes the original sample a row came from and ``group`` the
    unit the train/test split respects (a babbling cycle, or the sample
    itself).  ``is_test`` is all False until :func:`assign_split` runs.
    """

    inputs: np.ndarray
    targets: np.ndarray
    pattern: np.ndarray
    origin: np.ndarray
    group: np.ndarray
    is_test: np.ndarray
    normalization: Normalization | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)

    @property
    def n_original(self):
        return int(self.origin.max()) + 1 if len(self.origin) else 0

    @property
    def train_rows(self):
        return np.flatnonzero(~self.is_test)

    @property
    def test_rows(self):
        return np.flatnonzero(self.is_test)

    def rows(self, pattern=None, test=None):
        sel = np.ones(len(self), dtype=bool)
        if pattern is not None:
            sel &= self.pattern == int(pattern)
        if test is not None:
            sel &= self.is_test == bool(test)
        return np.flatnonzero(sel)

    def originals(self, test=None):
        """Complete samples (one per original index) and their indices."""
        idx = self.rows(MaskPattern.COMPLETE, test)
        return self.targets[idx], self.origin[idx]

    # persistence ---------------------------------------------------------
    def table(self):
        return np.column_stack([self.pattern, self.origin, self.group, self.is_test,
                                self.inputs, self.targets])

    @staticmethod
    def header():
        return (["pattern", "origin", "group", "is_test"]
                + [f"in_{c}" for c in SAMPLE_COLUMNS] + [f"tgt_{c}" for c in SAMPLE_COLUMNS])

    def save(self, path, meta=None):
        meta = dict(self.meta, **(meta or {}))
        if self.normalization is not None:
            meta["normalization"] = self.normalization.to_dict()
        io.write_table(path, self.table(), self.header(), meta)

    @classmethod
    def load(cls, path):
        table, meta = io.read_table(path)
        norm = meta.pop("normalization", None)
        meta.pop("columns", None)
        return cls(
            inputs=table[:, 4:4 + SAMPLE_DIM].copy(),
            targets=table[:, 4 + SAMPLE_DIM:].copy(),
            pattern=table[:, 0].astype(np.int64),
            origin=table[:, 1].astype(np.int64),
            group=table[:, 2].astype(np.int64),
            is_test=table[:, 3].astype(bool),
            normalization=None if norm is None else Normalization.from_dict(norm),
            meta=meta,
        )


def augment(samples, groups=None, normalization=None):
    """Concatenate the complete samples with their three masked variants."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n == 0:
        raise InputError("cannot augment an empty sample set")
    groups = np.arange(n) if groups is None else np.asarray(groups, dtype=np.int64)
    patterns = list(MaskPattern)
    return AugmentedDataset(
        inputs=np.concatenate([apply_mask(samples, p) for p in patterns]),
        targets=np.tile(samples, (len(patterns), 1)),
        pattern=np.repeat([int(p) for p in patterns], n),
        origin=np.tile(np.arange(n), len(patterns)),
        group=np.tile(groups, len(patterns)),
        is_test=np.zeros(n * len(patterns), dtype=bool),
        normalization=normalization,
    )


def build_dataset(trace: BabbleTrace):
    """Trace -> augmented dataset whose split groups are babbling cycles."""
    return augment(make_samples(trace), sample_groups(trace), trace.normalization)


def assign_split(ds: AugmentedDataset, ratio, seed):
    """Tag rows train/test by holding out whole groups of original samples.

    ``round((1 - ratio) * n_groups)`` randomly chosen groups go to test, so all
    masked variants of a sample (and all samples of a group) share a side.
    """
    if not 0.0 < ratio < 1.0:
        raise InputError(f"split ratio must be in (0, 1), got {ratio}")
    groups = np.unique(ds.group)
    rng = np.random.default_rng(seed)
    n_test = int(round((1.0 - ratio) * len(groups)))
    test_groups = rng.permutation(groups)[:n_test]
    return replace(ds, is_test=np.isin(ds.group, test_groups))


class BatchStream:
    """Endless uniform sampling (with replacement) of training rows."""

    def __init__(self, ds: AugmentedDataset, batch_size, seed):
        self.dataset = ds
        self.pool = ds.train_rows
        if batch_size > len(self.pool):
            raise InputError(f"batch size {batch_size} exceeds {len(self.pool)} training rows")
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def __iter__(self):
        return self

    def __next__(self):
        idx = self.pool[self.rng.integers(0, len(self.pool), size=self.batch_size)]
        return self.dataset.inputs[idx], self.dataset.targets[idx], idx


def split_and_batch(ds: AugmentedDataset, ratio, batch_size, seed):
    """Split on original samples, then stream training batches.

    Returns the tagged dataset and a :class:`BatchStream` over its train rows.
    """
    tagged = assign_split(ds, ratio, seed)
    return tagged, BatchStream(tagged, batch_size, seed + 1)
