"""Multimodal variational autoencoder and its training loop.

Five modality encoders feed a shared encoder whose two linear heads give the
mean and log-variance of a 28-dim Gaussian latent.  A shared decoder maps a
latent code back to 70 features that are sliced (20, 20, 5, 5, 20) into five
modality decoders, each emitting a per-dimension mean (linear) and variance
(softplus + 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataset import MASK_VALUE, SAMPLE_DIM, BatchStream
from .errors import ContractError, ShapeError, TrainingError
from .layers import MLP, DenseLayer
from .optim import AdamState, adam_step

VAR_FLOOR = 1e-6
LATENT_DIM = 28


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    start: int
    dim: int
    encoder: tuple
    decoder: tuple

    @property
    def stop(self):
        return self.start + self.dim

    @property
    def cols(self):
        return slice(self.start, self.stop)

    @property
    def weight(self):
        return 1.0 / self.dim

    @property
    def feature_dim(self):
        return self.encoder[-1]


MODALITIES = (
    ModalitySpec("proprioception", 0, 8, (40, 20), (40,)),
    ModalitySpec("vision", 8, 8, (40, 20), (40,)),
    ModalitySpec("touch", 16, 2, (10, 5), (10,)),
    ModalitySpec("sound", 18, 2, (10, 5), (10,)),
    ModalitySpec("motor", 20, 8, (40, 20), (40,)),
)


def column_weights(modalities=MODALITIES):
    w = np.zeros(SAMPLE_DIM)
    for m in modalities:
        w[m.cols] = m.weight
    return w


@dataclass
class GaussianBatchOutput:
    mean: np.ndarray
    variance: np.ndarray


class GaussianHead:
    """Parallel mean (linear) and variance (softplus) layers."""

    def __init__(self, n_in, n_out, rng, name):
        self.mean = DenseLayer(n_in, n_out, "linear", rng, f"{name}.mean")
        self.var = DenseLayer(n_in, n_out, "softplus", rng, f"{name}.var")

    def parameters(self):
        return self.mean.parameters() + self.var.parameters()

    def __call__(self, tape, h):
        return self.mean(tape, h), ad.add(self.var(tape, h), VAR_FLOOR)


class VAEBase:
    """Shared inference helpers; subclasses define the encoder and decoder."""

    kind = "base"
    latent_dim = LATENT_DIM

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def encode_nodes(self, tape, x):
        raise NotImplementedError

    def decode_nodes(self, tape, z):
        raise NotImplementedError

    def _check_input(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != SAMPLE_DIM:
            raise ShapeError(f"expected {SAMPLE_DIM}-wide input, got {x.shape}")
        return x

    def encode(self, x):
        """Latent mean and log-variance arrays for a batch of samples."""
        tape = ad.Tape()
        mu, logvar = self.encode_nodes(tape, tape.constant(self._check_input(x)))
        return mu.value, logvar.value

    def decode(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.latent_dim:
            raise ShapeError(f"expected latent width {self.latent_dim}, got {z.shape}")
        tape = ad.Tape()
        mean, var = self.decode_nodes(tape, tape.constant(z))
        return GaussianBatchOutput(mean.value, var.value)

    def reconstruct(self, x, mode="mean", rng=None):
        """Encode ``x`` (masked entries = -2) and decode every dimension.

        ``mode="mean"`` decodes the latent mean; ``"sampled"`` draws one
        reparameterized latent sample per row.
        """
        mu, logvar = self.encode(x)
        if mode == "mean":
            z = mu
        elif mode == "sampled":
            rng = np.random.default_rng() if rng is None else rng
            z = ad.reparameterize(mu, logvar, rng.standard_normal(mu.shape))
        else:
            raise ValueError(f"unknown reconstruction mode {mode!r}")
        return self.decode(z)

    def forward(self, tape, x, noise=None):
        """Full pass on ``tape``; ``noise=None`` decodes the latent mean."""
        mu, logvar = self.encode_nodes(tape, x)
        z = mu if noise is None else ad.reparameterize(mu, logvar, noise)
        mean, var = self.decode_nodes(tape, z)
        return mu, logvar, mean, var


class MMVAE(VAEBase):
    kind = "mmvae"

    def __init__(self, seed=0, modalities=MODALITIES, latent_dim=LATENT_DIM,
                 shared_encoder=100, shared_decoder=100):
        rng = np.random.default_rng(seed)
        self.modalities = tuple(modalities)
        self.latent_dim = latent_dim
        self.encoders = [
            MLP((m.dim,) + m.encoder, ("relu",) * len(m.encoder), rng, f"enc.{m.name}")
            for m in self.modalities
        ]
        features = sum(m.feature_dim for m in self.modalities)
        self.shared_enc = DenseLayer(features, shared_encoder, "relu", rng, "enc.shared")
        self.z_mean = DenseLayer(shared_encoder, latent_dim, "linear", rng, "latent.mean")
        self.z_logvar = DenseLayer(shared_encoder, latent_dim, "linear", rng, "latent.logvar")
        self.shared_dec = MLP((latent_dim, shared_decoder, features), ("relu", "relu"),
                              rng, "dec.shared")
        self.decoders = []
        for m in self.modalities:
            hidden = MLP((m.feature_dim,) + m.decoder, ("relu",) * len(m.decoder),
                         rng, f"dec.{m.name}")
            self.decoders.append((hidden, GaussianHead(m.decoder[-1], m.dim, rng, f"dec.{m.name}.out")))

    def config(self):
        return {"kind": self.kind, "latent_dim": self.latent_dim,
                "modalities": [m.__dict__ for m in self.modalities],
                "shared_encoder": self.shared_enc.n_out,
                "shared_decoder": self.shared_dec.layers[0].n_out}

    @classmethod
    def from_config(cls, cfg):
        mods = [ModalitySpec(d["name"], d["start"], d["dim"], tuple(d["encoder"]), tuple(d["decoder"]))
                for d in cfg["modalities"]]
        return cls(0, mods, cfg["latent_dim"], cfg["shared_encoder"], cfg["shared_decoder"])

    def parameters(self):
        params = [p for enc in self.encoders for p in enc.parameters()]
        params += self.shared_enc.parameters() + self.z_mean.parameters() + self.z_logvar.parameters()
        params += self.shared_dec.parameters()
        for hidden, head in self.decoders:
            params += hidden.parameters() + head.parameters()
        return params

    def encode_nodes(self, tape, x):
        feats = [enc(tape, ad.columns(x, m.start, m.stop))
                 for m, enc in zip(self.modalities, self.encoders)]
        h = self.shared_enc(tape, ad.concat(feats))
        return self.z_mean(tape, h), self.z_logvar(tape, h)

    def decode_nodes(self, tape, z):
        h = self.shared_dec(tape, z)
        means, vars_ = [], []
        offset = 0
        for m, (hidden, head) in zip(self.modalities, self.decoders):
            part = ad.columns(h, offset, offset + m.feature_dim)
            offset += m.feature_dim
            mean, var = head(tape, hidden(tape, part))
            means.append(mean)
            vars_.append(var)
        return ad.concat(means), ad.concat(vars_)


# -- objective ------------------------------------------------------------

def kl_to_standard_normal(mu, logvar):
    """Batch-mean KL(N(mu, exp(logvar)) || N(0, I)); works on nodes or arrays."""
    lv = ad.clip(logvar, ad.LOGVAR_MIN, ad.LOGVAR_MAX)
    terms = ad.sub(ad.add(ad.exp(lv), ad.square(mu)), ad.add(lv, 1.0))
    n = ad._val(mu).shape[0]
    return ad.mul(ad.sum_all(terms), 0.5 / n)


def loss(x_target, mean, variance, mu=None, logvar=None, beta=0.0, modalities=MODALITIES,
         nll_beta=0.0):
    """Modality-weighted Gaussian NLL plus ``beta`` times the latent KL.

    Each modality's NLL (summed over its t and t-1 dimensions) is weighted by
    1 / its dimensionality; the total is averaged over the batch.  With
    ``nll_beta > 0`` every entry's NLL is also scaled by its predicted
    variance raised to ``nll_beta``, held constant for the gradient.  At 1 the
    mean receives plain squared-error gradients, so dimensions the model is
    unsure about are not starved of signal.  Inputs may be tape nodes or arrays.
    """
    target = np.atleast_2d(np.asarray(x_target, dtype=float))
    if np.any(target == MASK_VALUE):
        raise ContractError("loss target contains the mask value -2")
    nll = ad.gaussian_nll(target, mean, variance)
    if nll_beta:
        nll = ad.mul(nll, ad._val(variance) ** nll_beta)
    total = ad.mul(ad.sum_all(ad.mul(nll, column_weights(modalities))), 1.0 / len(target))
    if beta:
        total = ad.add(total, ad.mul(kl_to_standard_normal(mu, logvar), beta))
    return total


def loss_parts(x_target, mean, variance, mu, logvar, modalities=MODALITIES):
    """Per-modality batch-mean NLL sums and the KL, as floats."""
    nll = ad.gaussian_nll(np.asarray(x_target), np.asarray(mean), np.asarray(variance))
    parts = {m.name: float(nll[:, m.cols].sum() / len(nll)) for m in modalities}
    parts["kl"] = float(kl_to_standard_normal(np.asarray(mu), np.asarray(logvar)))
    return parts


# -- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    beta: float = 0.0
    nll_beta: float = 0.5

    @classmethod
    def paper_scale(cls, seed=0):
        return cls(steps=80000, batch_size=1000, lr=5e-5, seed=seed)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)

    @property
    def losses(self):
        return np.array([row["total"] for row in self.history])


HISTORY_COLUMNS = ("step", "total", *[m.name for m in MODALITIES], "kl")


def train(ds, config: TrainConfig, model=None, input_fn=None, log_every=1):
    """Adam on :func:`loss` over batches of (masked input, complete target).

    ``input_fn(inputs, targets, rng)`` may rewrite each batch's inputs (used by
    the zero-dropout baseline).  The history holds one row per ``log_every``
    steps with the total loss, per-modality NLL and KL.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    if model is None:
        model = MMVAE(seed=np.random.default_rng(seeds[0]))
    if len(ds.train_rows) == 0:
        raise ContractError("dataset has no training rows")
    batches = BatchStream(ds, config.batch_size, np.random.default_rng(seeds[1]))
    noise_rng = np.random.default_rng(seeds[2])
    modalities = getattr(model, "modalities", MODALITIES)
    params = model.parameters()
    state = AdamState(lr=config.lr)
    result = TrainResult(model)
    for step in range(1, config.steps + 1):
        inputs, targets, _ = next(batches)
        if input_fn is not None:
            inputs = input_fn(inputs, targets, noise_rng)
        tape = ad.Tape()
        noise = noise_rng.standard_normal((len(inputs), model.latent_dim))
        mu, logvar, mean, var = model.forward(tape, tape.constant(inputs), noise)
        total = loss(targets, mean, var, mu, logvar, config.beta, modalities, config.nll_beta)
        if not np.isfinite(total.value):
            raise TrainingError("loss is not finite", step)
        adam_step(state, params, tape.backward(total))
        if step % log_every == 0 or step == config.steps:
            row = {"step": step, "total": float(total.value)}
            row.update(loss_parts(targets, mean.value, var.value, mu.value, logvar.value, modalities))
            result.history.append(row)
    return result
