"""Comparison models and the three-case comparison harness.

Methods compared:

* ``mmvae``        the multimodal VAE trained on the augmented set
* ``vanilla``      a monolithic VAE trained on complete rows with 30% of the
                   input entries zeroed at random (missing inputs are 0)
* ``vanilla-aug``  the same VAE trained on the augmented set
* ``fwdinv``       separate feed-forward forward and inverse models
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dataset import (
    MASK_VALUE, SAMPLE_DIM, SENSORY_PREV, SENSORY_T, SLOTS, T_BLOCK, PREV_BLOCK,
    AugmentedDataset, MaskPattern,
)
from .errors import ConfigError, InputError, TrainingError
from .layers import MLP, DenseLayer
from .model import LATENT_DIM, MMVAE, GaussianHead, TrainConfig, TrainResult, VAEBase, train
from .optim import AdamState, adam_step
from .tasks import mse_percent, reconstruct_rows

U_T = np.r_[SLOTS["u_t"]]
METHODS = ("mmvae", "vanilla", "vanilla-aug", "fwdinv")


class VanillaVAE(VAEBase):
    """28 -> 100 -> 100 -> latent 28 -> 100 -> 100 -> 28 (mean, variance)."""

    kind = "vanilla"

    def __init__(self, seed=0, hidden=(100, 100), latent_dim=LATENT_DIM, mask_fill=MASK_VALUE):
        rng = np.random.default_rng(seed)
        self.hidden = tuple(hidden)
        self.latent_dim = latent_dim
        self.mask_fill = float(mask_fill)
        self.encoder = MLP((SAMPLE_DIM,) + self.hidden, ("relu",) * len(self.hidden), rng, "enc")
        self.z_mean = DenseLayer(self.hidden[-1], latent_dim, "linear", rng, "latent.mean")
        self.z_logvar = DenseLayer(self.hidden[-1], latent_dim, "linear", rng, "latent.logvar")
        self.decoder = MLP((latent_dim,) + self.hidden, ("relu",) * len(self.hidden), rng, "dec")
        self.head = GaussianHead(self.hidden[-1], SAMPLE_DIM, rng, "dec.out")

    def config(self):
        return {"kind": self.kind, "hidden": list(self.hidden), "latent_dim": self.latent_dim,
                "mask_fill": self.mask_fill}

    @classmethod
    def from_config(cls, cfg):
        return cls(0, tuple(cfg["hidden"]), cfg["latent_dim"], cfg["mask_fill"])

    def parameters(self):
        return (self.encoder.parameters() + self.z_mean.parameters() + self.z_logvar.parameters()
                + self.decoder.parameters() + self.head.parameters())

    def encode_nodes(self, tape, x):
        h = self.encoder(tape, x)
        return self.z_mean(tape, h), self.z_logvar(tape, h)

    def decode_nodes(self, tape, z):
        return self.head(tape, self.decoder(tape, z))


def zero_dropout(probability):
    """Batch transform: complete targets with entries zeroed independently."""
    def fn(inputs, targets, rng):
        keep = rng.random(targets.shape) >= probability
        return targets * keep
    return fn


def complete_only(ds: AugmentedDataset):
    """The dataset restricted to its COMPLETE block (split tags kept)."""
    rows = ds.rows(MaskPattern.COMPLETE)
    return replace(ds, inputs=ds.inputs[rows], targets=ds.targets[rows], pattern=ds.pattern[rows],
                   origin=ds.origin[rows], group=ds.group[rows], is_test=ds.is_test[rows])


def train_vanilla(ds: AugmentedDataset, mode, config: TrainConfig, dropout=0.3, log_every=1):
    """Train the vanilla VAE in ``"zero-dropout"`` or ``"augmented"`` mode."""
    init_seed = np.random.SeedSequence(config.seed).spawn(3)[0]
    if mode == "zero-dropout":
        model = VanillaVAE(np.random.default_rng(init_seed), mask_fill=0.0)
        return train(complete_only(ds), config, model, zero_dropout(dropout), log_every)
    if mode == "augmented":
        model = VanillaVAE(np.random.default_rng(init_seed))
        return train(ds, config, model, log_every=log_every)
    raise ValueError(f"unknown vanilla mode {mode!r}")


# -- feed-forward internal models -----------------------------------------

class Regressor:
    """Plain MLP trained with squared error."""

    kind = "regressor"

    def __init__(self, widths, activations, seed=0, role=""):
        self.widths = tuple(widths)
        self.activations = tuple(activations)
        self.role = role
        self.net = MLP(self.widths, self.activations, np.random.default_rng(seed), role or "mlp")

    def config(self):
        return {"kind": self.kind, "widths": list(self.widths),
                "activations": list(self.activations), "role": self.role}

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["widths"], cfg["activations"], 0, cfg.get("role", ""))

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def predict(self, x):
        tape = ad.Tape()
        return self.net(tape, tape.constant(np.atleast_2d(x))).value


def forward_model(seed=0):
    """All modalities at t-1 (14) -> 14 tanh -> sensory state at t (10)."""
    return Regressor((14, 14, 10), ("tanh", "linear"), seed, "forward")


def inverse_model(seed=0):
    """Sensory state at t-1 and t (20) -> 100 tanh -> 100 tanh -> u_t (4)."""
    return Regressor((20, 100, 100, 4), ("tanh", "tanh", "linear"), seed, "inverse")


def forward_io(samples):
    return samples[:, PREV_BLOCK], samples[:, SENSORY_T]


def inverse_io(samples):
    return np.concatenate([samples[:, SENSORY_PREV], samples[:, SENSORY_T]], axis=1), samples[:, U_T]


def train_regressor(model: Regressor, x, y, config: TrainConfig):
    """Minibatch Adam on mean squared error; returns a :class:`TrainResult`."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[1])
    if config.batch_size > len(x):
        raise InputError(f"batch size {config.batch_size} exceeds {len(x)} training rows")
    params = model.parameters()
    state = AdamState(lr=config.lr)
    result = TrainResult(model)
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(x), size=config.batch_size)
        tape = ad.Tape()
        pred = model.net(tape, tape.constant(x[idx]))
        total = ad.mean_all(ad.square(ad.sub(pred, y[idx])))
        if not np.isfinite(total.value):
            raise TrainingError("loss is not finite", step)
        adam_step(state, params, tape.backward(total))
        result.history.append({"step": step, "total": float(total.value)})
    return result


REGRESSOR_DEFAULTS = TrainConfig(steps=20000, batch_size=256, lr=1e-3)
# the 14-unit forward net is still improving after 20000 steps at batch 256
FORWARD_DEFAULTS = TrainConfig(steps=100000, batch_size=1024, lr=3e-3)


def train_fwd_inv(ds: AugmentedDataset, config: TrainConfig = REGRESSOR_DEFAULTS,
                  forward_config: TrainConfig | None = None):
    """Supervised forward and inverse models on the complete training samples.

    ``config`` trains the inverse model and seeds both; ``forward_config``
    (default :data:`FORWARD_DEFAULTS`) sets the forward model's schedule.
    """
    samples, _ = ds.originals(test=False)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    fc = FORWARD_DEFAULTS if forward_config is None else forward_config
    fwd = train_regressor(forward_model(np.random.default_rng(seeds[0])), *forward_io(samples),
                          replace(fc, seed=int(seeds[0].generate_state(1)[0])))
    inv = train_regressor(inverse_model(np.random.default_rng(seeds[1])), *inverse_io(samples),
                          replace(config, seed=int(seeds[1].generate_state(1)[0])))
    return fwd, inv


def _unflag(x):
    return np.where(x == MASK_VALUE, 0.0, x)


def imitation_case_chain(fwd: Regressor, inv: Regressor, rows):
    """Predict the full t block from rows observing only q_{t-1}, v_t, v_{t-1}.

    The inverse model infers u_t with unobserved entries set to 0; the forward
    model then maps the t-1 block, with the inferred u_t in its motor slot, to
    the sensory t block.
    """
    rows = _unflag(np.atleast_2d(rows))
    u = inv.predict(inverse_io(rows)[0])
    prev = rows[:, PREV_BLOCK].copy()
    prev[:, 10:14] = u
    sensory = fwd.predict(prev)
    return np.concatenate([sensory, u], axis=1)


# -- comparison -------------------------------------------------------------

class ComparisonCase(enum.Enum):
    FORWARD = ("forward", MaskPattern.PREV_ONLY, SENSORY_T)
    INVERSE = ("inverse", MaskPattern.VISION_ONLY, U_T)
    IMITATION = ("imitation", MaskPattern.VISION_PLUS_PREV_Q, T_BLOCK)

    def __init__(self, label, pattern, scored):
        self.label = label
        self.pattern = pattern
        self.scored = scored


def case_prediction(method, model, ds: AugmentedDataset, case: ComparisonCase):
    """Predicted scored slice and its target for every test row of ``case``."""
    rows = ds.rows(case.pattern, test=True)
    if len(rows) == 0:
        raise InputError("no test rows for comparison")
    target = ds.targets[rows][:, case.scored]
    if method == "fwdinv":
        fwd, inv = model
        complete = ds.targets[rows]
        if case is ComparisonCase.FORWARD:
            pred = fwd.predict(forward_io(complete)[0])
        elif case is ComparisonCase.INVERSE:
            pred = inv.predict(inverse_io(complete)[0])
        else:
            pred = imitation_case_chain(fwd, inv, ds.inputs[rows])
    else:
        pred = reconstruct_rows(model, ds.inputs[rows]).mean[:, case.scored]
    return pred, target


def score_cases(method, model, ds):
    return {case.label: mse_percent(*case_prediction(method, model, ds, case))
            for case in ComparisonCase}


@dataclass
class ComparisonTable:
    """Per-method, per-case MSE% scores across repetitions."""

    scores: dict = field(default_factory=dict)  # method -> case -> [scores]

    def add(self, method, case_scores):
        per = self.scores.setdefault(method, {})
        for case, value in case_scores.items():
            per.setdefault(case, []).append(float(value))

    def summary(self, method, case):
        vals = np.asarray(self.scores[method][case])
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        return float(med), float(q1), float(q3)

    def median(self, method, case):
        return self.summary(method, case)[0]

    def cases(self):
        return [c.label for c in ComparisonCase]

    def rows(self):
        for method in self.scores:
            yield method, [self.summary(method, c) for c in self.cases()]

    def to_csv(self):
        head = ["method"] + [f"{c}_{s}" for c in self.cases() for s in ("median", "q1", "q3")]
        lines = [",".join(head)]
        for method, stats in self.rows():
            lines.append(",".join([method] + [f"{v:.6g}" for st in stats for v in st]))
        return "\n".join(lines) + "\n"

    def to_markdown(self):
        cells = [["method"] + self.cases()]
        for method, stats in self.rows():
            cells.append([method] + [f"{m:.3f}% [{a:.3f}; {b:.3f}]%" for m, a, b in stats])
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        fmt = lambda r: "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"
        out = [fmt(cells[0]), "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        out += [fmt(r) for r in cells[1:]]
        return "\n".join(out) + "\n"

    def to_jsonl(self):
        lines = []
        for method, per in self.scores.items():
            for case, vals in per.items():
                for rep, v in enumerate(vals):
                    lines.append(json.dumps({"method": method, "case": case, "rep": rep, "mse": v}))
        return "\n".join(lines) + "\n"


def compare(runs, ds: AugmentedDataset):
    """Aggregate case scores over repetitions.

    ``runs`` is a sequence (one entry per repetition) of ``{method: model}``
    maps.  Models carrying a ``normalization`` digest in ``meta`` must agree
    with the dataset's normalization.
    """
    expected = ds.normalization.digest() if ds.normalization is not None else None
    table = ComparisonTable()
    for run in runs:
        for method, model in run.items():
            for m in (model if isinstance(model, tuple) else (model,)):
                digest = getattr(m, "meta", {}).get("normalization")
                if digest is not None and expected is not None and digest != expected:
                    raise ConfigError(f"{method}: normalization {digest} != dataset {expected}")
            table.add(method, score_cases(method, model, ds))
    return table


def train_method(method, ds, config: TrainConfig, regressor_config=None):
    """Train one comparison method; returns the model (a pair for ``fwdinv``).

    A ``regressor_config`` replaces the schedules of both regressors.
    """
    if method == "mmvae":
        init = np.random.SeedSequence(config.seed).spawn(3)[0]
        return train(ds, config, MMVAE(np.random.default_rng(init))).model
    if method == "vanilla":
        return train_vanilla(ds, "zero-dropout", config).model
    if method == "vanilla-aug":
        return train_vanilla(ds, "augmented", config).model
    if method == "fwdinv":
        rc = regressor_config or REGRESSOR_DEFAULTS
        fwd, inv = train_fwd_inv(ds, replace(rc, seed=config.seed), regressor_config)
        return fwd.model, inv.model
    raise ValueError(f"unknown method {method!r}")


def run_comparison(ds, repetitions, config: TrainConfig, methods=METHODS, regressor_config=None):
    """Train every method ``repetitions`` times with seeds seed, seed+1, ..."""
    runs = []
    for rep in range(repetitions):
        cfg = replace(config, seed=config.seed + rep)
        runs.append({m: train_method(m, ds, cfg, regressor_config) for m in methods})
    return compare(runs, ds), runs
