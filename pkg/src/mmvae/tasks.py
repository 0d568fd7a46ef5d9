"""Reconstruction, prediction and imitation on top of a trained model.

All scores are MSE percentages: 100 x the mean squared error measured in the
normalized [-1, 1] coordinates of the babbling data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arm
from .dataset import (
    MASK_VALUE, PREV_BLOCK, SAMPLE_DIM, SLOTS, T_BLOCK, AugmentedDataset, MaskPattern,
)
from .errors import InputError, RolloutError
from .model import MODALITIES

# positions of each modality inside a 14-value time-step block (q, v, p, s, u)
BLOCK = {"q": slice(0, 4), "v": slice(4, 8), "p": slice(8, 9), "s": slice(9, 10), "u": slice(10, 14)}


def mse_percent(pred, target, dims=None):
    """100 x mean squared difference over the selected trailing dimensions.

    ``dims`` is anything that indexes the last axis (slice, index array or
    boolean mask); ``None`` selects everything.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    if dims is not None:
        diff = diff[..., dims]
    if diff.size == 0:
        raise InputError("empty selection")
    return 100.0 * float(np.mean(diff * diff))


@dataclass
class MetricReport:
    per_modality: dict
    overall: float
    count: int
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"per_modality": dict(self.per_modality), "overall": self.overall,
                "count": self.count, "warnings": list(self.warnings)}


def modality_report(pred, target, modalities=MODALITIES):
    per = {m.name: mse_percent(pred, target, m.cols) for m in modalities}
    return MetricReport(per, mse_percent(pred, target), len(target))


def _model_inputs(model, inputs):
    """Replace the -2 flag by the fill value the model was trained with."""
    fill = getattr(model, "mask_fill", MASK_VALUE)
    if fill == MASK_VALUE:
        return inputs
    return np.where(inputs == MASK_VALUE, fill, inputs)


def reconstruct_rows(model, inputs):
    return model.reconstruct(_model_inputs(model, np.asarray(inputs, dtype=float)))


def eval_reconstruction(model, ds: AugmentedDataset, pattern: MaskPattern):
    """Per-modality MSE% of reconstructing the test rows masked by ``pattern``."""
    rows = ds.rows(MaskPattern(pattern), test=True)
    if len(rows) == 0:
        raise InputError("no test rows for this pattern")
    recon = reconstruct_rows(model, ds.inputs[rows])
    return modality_report(recon.mean, ds.targets[rows])


# -- prediction -----------------------------------------------------------

def prev_only_sample(state_prev):
    state_prev = np.atleast_2d(np.asarray(state_prev, dtype=float))
    x = np.full((len(state_prev), SAMPLE_DIM), MASK_VALUE)
    x[:, PREV_BLOCK] = state_prev
    return x


def predict_next(model, state_prev):
    """Mean and variance of the t block given only the t-1 block (14 values).

    Accepts a single block or a batch of blocks.
    """
    single = np.ndim(state_prev) == 1
    out = reconstruct_rows(model, prev_only_sample(state_prev))
    mean, var = out.mean[:, T_BLOCK], out.variance[:, T_BLOCK]
    return (mean[0], var[0]) if single else (mean, var)


@dataclass
class Rollout:
    """Iterated predictions; ``prev[k]`` is the block fed to produce ``means[k]``."""

    prev: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    truth: np.ndarray | None = None

    @property
    def horizon(self):
        return len(self.means)

    def vision_mse(self, steps=None):
        if self.truth is None:
            raise InputError("rollout has no ground truth")
        n = self.horizon if steps is None else steps
        return mse_percent(self.means[:n], self.truth[:n], BLOCK["v"])


def rollout(model, initial, horizon, truth=None):
    """Feed each predicted t block back in as the next t-1 block."""
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    block = np.asarray(initial, dtype=float)
    prev, means, variances = [], [], []
    for k in range(horizon):
        mean, var = predict_next(model, block)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise RolloutError("non-finite prediction", k + 1)
        prev.append(block)
        means.append(mean)
        variances.append(var)
        block = mean
    truth = None if truth is None else np.asarray(truth, dtype=float)[:horizon]
    return Rollout(np.array(prev), np.array(means), np.array(variances), truth)


def held_out_cycles(ds: AugmentedDataset, length=None):
    """Complete samples of each test-set babbling cycle, in time order.

    Only cycles of ``length`` samples (default the most common length among
    test groups) are returned, ordered by group id.
    """
    idx = ds.rows(MaskPattern.COMPLETE, test=True)
    cycles = {}
    for g in np.unique(ds.group[idx]):
        sel = idx[ds.group[idx] == g]
        cycles[int(g)] = ds.targets[sel[np.argsort(ds.origin[sel])]]
    if not cycles:
        return []
    if length is None:
        sizes, counts = np.unique([len(c) for c in cycles.values()], return_counts=True)
        length = int(sizes[np.argmax(counts)])
    return [c for _, c in sorted(cycles.items()) if len(c) == length]


def held_out_swings(ds: AugmentedDataset, length=None):
    """Test-set babbling cycles as (rows, 14) arrays of consecutive t blocks."""
    return [c[:, T_BLOCK] for c in held_out_cycles(ds, length)]


def swing_rollout(model, swing, horizon, start=2):
    """Roll out from row ``start`` of a swing and attach the true continuation."""
    if start + horizon >= len(swing):
        raise InputError(f"swing of {len(swing)} rows too short for start {start} + horizon {horizon}")
    return rollout(model, swing[start], horizon, truth=swing[start + 1:start + 1 + horizon])


# -- closed-loop imitation ------------------------------------------------

@dataclass
class Tracking:
    """One closed-loop run against a vision reference (normalized units)."""

    reference: np.ndarray
    executed: np.ndarray
    commands: np.ndarray
    fed: np.ndarray
    measured: np.ndarray
    report: MetricReport

    @property
    def mse(self):
        return self.report.overall


def imitation_sample(target_v, v_prev, q_prev):
    """Sample observing only v_t, v_{t-1} and q_{t-1}."""
    x = np.full(SAMPLE_DIM, MASK_VALUE)
    x[SLOTS["v_t"]] = target_v
    x[SLOTS["v_prev"]] = v_prev
    x[SLOTS["q_prev"]] = q_prev
    return x


def model_policy(model, norm):
    """Controller reading the u_t head of the model's reconstruction."""
    def policy(state, target):
        q_prev = norm.normalize(state.q, arm.Q_COLS)
        v_prev = norm.normalize(state.v, arm.V_COLS)
        x = imitation_sample(target, v_prev, q_prev)
        u = reconstruct_rows(model, x[None]).mean[0, SLOTS["u_t"]]
        return norm.denormalize(u, arm.U_COLS), x
    return policy


def oracle_policy(config, norm):
    """Damped-least-squares controller aiming at the denormalized reference."""
    def policy(state, target):
        u, _ = arm.ik_oracle_step(state.q, norm.denormalize(target, arm.V_COLS), config)
        return u, None
    return policy


def track(reference, start: arm.ArmState, config: arm.ArmConfig, norm, policy,
          saturation_limit=10, error_limit=2.0):
    """Drive the plant toward one reference waypoint per control step.

    Every step the policy sees the plant's *measured* state. A warning is
    attached when joints stay pinned at a limit for more than
    ``saturation_limit`` consecutive steps or the final MSE% exceeds
    ``error_limit``.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    lim = np.asarray(config.joint_limits)
    state = start
    executed, commands, fed, measured = [], [], [], []
    pinned = worst_pinned = 0
    for target in reference:
        u, x = policy(state, target)
        measured.append(np.concatenate([state.q, state.v]))
        fed.append(np.full(SAMPLE_DIM, np.nan) if x is None else x)
        state = arm.step(state, u, config)
        commands.append(u)
        executed.append(norm.normalize(state.v, arm.V_COLS))
        at_limit = np.any(np.isclose(state.q, lim[:, 0]) | np.isclose(state.q, lim[:, 1]))
        pinned = pinned + 1 if at_limit else 0
        worst_pinned = max(worst_pinned, pinned)
    executed = np.array(executed)
    score = mse_percent(executed, reference)
    report = MetricReport({"vision": score}, score, len(reference))
    if worst_pinned > saturation_limit:
        report.warnings.append(f"joints saturated for {worst_pinned} consecutive steps")
    if not np.isfinite(score) or score > error_limit:
        report.warnings.append(f"high tracking error: {score:.3f}%")
    return Tracking(reference, executed, np.array(commands), np.array(fed),
                    np.array(measured), report)


def swing_start(swing, config, norm):
    """Plant state at the first row of a (normalized) swing."""
    return arm.state_from_q(norm.denormalize(swing[0, BLOCK["q"]], arm.Q_COLS), config)


def imitate(model, reference, start, config, norm, steps=None):
    """Closed-loop imitation of a normalized vision reference with the model."""
    reference = np.atleast_2d(reference)[:steps]
    return track(reference, start, config, norm, model_policy(model, norm))


def imitate_swing(model, swing, config, norm, controller="model"):
    """Track a held-out swing's vision path starting from its first state."""
    start = swing_start(swing, config, norm)
    policy = model_policy(model, norm) if controller == "model" else oracle_policy(config, norm)
    return track(swing[1:, BLOCK["v"]], start, config, norm, policy)
