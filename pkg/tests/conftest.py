"""Shared desk-scale fixtures and the acceptance summary printer.

Trained models are built once per session.  Setting ``MMVAE_ACCEPTANCE_CACHE``
to a directory stores them as checkpoints keyed by a hash of everything that
determines them, so repeated development runs can skip training.  It is off
by default: a plain ``pytest`` run trains every model from scratch.
"""

from __future__ import annotations

import os
import time
from dataclasses import replace
from pathlib import Path

import pytest

import acceptance_log
from mmvae import arm, io
from mmvae.baselines import FORWARD_DEFAULTS, REGRESSOR_DEFAULTS, train_method
from mmvae.checkpoint import load_checkpoint, save_checkpoint
from mmvae.config import RunConfig
from mmvae.dataset import assign_split, build_dataset

CACHE_ENV = "MMVAE_ACCEPTANCE_CACHE"
SEEDS = (0, 1, 2, 3, 4)
DATA_SEED, SPLIT_SEED = 7, 0


class DeskRun:
    """The 7380-row desk-scale data plus lazily trained models per (method, seed)."""

    def __init__(self):
        self.cfg = RunConfig(seed=DATA_SEED)
        self.trace = arm.babble_rows(self.cfg.arm, self.cfg.rows, DATA_SEED)
        self.ds = assign_split(build_dataset(self.trace), self.cfg.split_ratio, SPLIT_SEED)
        self.training = self.cfg.training()
        self.cache = Path(os.environ[CACHE_ENV]) if os.environ.get(CACHE_ENV) else None
        self.models = {}
        self.train_seconds = {}
        self.cached = set()

    def key(self, method, seed):
        return io.config_hash({"method": method, "seed": seed, "training": self.training.__dict__,
                               "regressor": REGRESSOR_DEFAULTS.__dict__,
                               "forward": FORWARD_DEFAULTS.__dict__, "data": self.cfg.data_dict(),
                               "split_seed": SPLIT_SEED})

    def model(self, method, seed):
        if (method, seed) in self.models:
            return self.models[method, seed]
        path = None
        if self.cache is not None:
            self.cache.mkdir(parents=True, exist_ok=True)
            path = self.cache / f"{method}-{seed}-{self.key(method, seed)}.ckpt"
        if path is not None and path.exists():
            loaded, _ = load_checkpoint(path)
            model = (loaded["forward"], loaded["inverse"]) if method == "fwdinv" else loaded["model"]
            self.cached.add((method, seed))
        else:
            t0 = time.perf_counter()
            model = train_method(method, self.ds, replace(self.training, seed=seed))
            self.train_seconds[method, seed] = time.perf_counter() - t0
            if path is not None:
                payload = {"forward": model[0], "inverse": model[1]} if method == "fwdinv" else model
                save_checkpoint(path, payload, {"key": self.key(method, seed)})
        self.models[method, seed] = model
        return model


@pytest.fixture(scope="session")
def desk():
    return DeskRun()


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
