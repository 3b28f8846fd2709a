"""Energy-based shooting policy: MLP energy, InfoNCE training, sampling inference.

The network and its gradients are written out explicitly (no autograd
dependency): the model is small enough that batched BLAS calls train it in
minutes, and the analytic gradients are checked against finite differences
in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import DEFAULT_ANGLE_LIMIT
from .errors import ArtifactMismatch, Diverged
from .planner import ScenarioRecord
from .table import TableGeometry

DEFAULT_HIDDEN = (128, 128)
DEFAULT_VEL_NORM = 3.0       # m/s, velocity normalization constant
N_PARTICLES = 64
N_ITERATIONS = 25
SIGMA_INIT = 0.2             # rad
SIGMA_DECAY = 0.9
SIGMA_MIN = 0.01             # rad


@dataclass
class Normalization:
    """Input scaling keeping network inputs O(1)."""

    pos_scale: tuple
    vel_scale: float
    u_scale: float

    @staticmethod
    def for_table(geom: TableGeometry, vel_scale: float = DEFAULT_VEL_NORM,
                  u_scale: float = DEFAULT_ANGLE_LIMIT) -> "Normalization":
        return Normalization((geom.half_length, geom.half_width), vel_scale, u_scale)

    def scale_vector(self) -> np.ndarray:
        sx, sy = self.pos_scale
        return np.array([sx, sy, self.vel_scale, self.vel_scale, self.u_scale])


@dataclass
class EnergyModel:
    """Fully connected energy network E(s, u) with tanh hidden layers."""

    weights: list        # [(W_in_out, b_out), ...]
    norm: Normalization

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def astype(self, dtype) -> "EnergyModel":
        return EnergyModel(
            [(w.astype(dtype), b.astype(dtype)) for w, b in self.weights], self.norm
        )

    def inputs(self, s: np.ndarray, us: np.ndarray) -> np.ndarray:
        """Normalized network inputs for one state and a batch of angles."""
        us = np.atleast_1d(np.asarray(us, dtype=float))
        x = np.empty((us.size, 5))
        x[:, :4] = np.asarray(s, dtype=float).reshape(4)
        x[:, 4] = us
        return x / self.norm.scale_vector()

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Energies for a pre-normalized input batch (n, 5) -> (n,)."""
        h = x
        for w, b in self.weights[:-1]:
            h = np.tanh(h @ w + b)
        w, b = self.weights[-1]
        return (h @ w + b)[:, 0]


def energy(model: EnergyModel, s: np.ndarray, u: float) -> float:
    """Scalar energy of one state-angle pair; deterministic."""
    return float(model.forward(model.inputs(s, [u]))[0])


def energies(model: EnergyModel, s: np.ndarray, us: np.ndarray) -> np.ndarray:
    return model.forward(model.inputs(s, us))


def init_model(
    geom: TableGeometry,
    rng: np.random.Generator,
    hidden: tuple = DEFAULT_HIDDEN,
    vel_scale: float = DEFAULT_VEL_NORM,
    u_scale: float = DEFAULT_ANGLE_LIMIT,
) -> EnergyModel:
    """Fan-in-scaled symmetric uniform init; the output layer starts at zero.

    Zero output weights make the initial energy constant, so training
    starts from the uniform-likelihood loss ln(M) exactly.
    """
    dims = (5,) + tuple(hidden) + (1,)
    weights = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
        weights.append((w, np.zeros(fan_out)))
    return EnergyModel(weights, Normalization.for_table(geom, vel_scale, u_scale))


def _forward_cached(model: EnergyModel, x: np.ndarray):
    """Forward pass keeping the activations needed for backprop."""
    acts = [x]
    h = x
    for w, b in model.weights[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    w, b = model.weights[-1]
    return (h @ w + b)[:, 0], acts


def _backward(model: EnergyModel, acts: list, d_energy: np.ndarray) -> list:
    """Gradients of sum(d_energy * E) w.r.t. every weight and bias."""
    grads = [None] * model.n_layers
    delta = d_energy[:, None]
    for i in range(model.n_layers - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i][0].T) * (1.0 - acts[i] ** 2)
    return grads


def _log_softmax_pos(e_batch: np.ndarray, pos_idx: np.ndarray):
    """Per-scenario -log softmax(-E) of the positive, with the softmax itself."""
    neg = -e_batch
    shift = neg.max(axis=1, keepdims=True)
    expd = np.exp(neg - shift)
    total = expd.sum(axis=1)
    p = expd / total[:, None]
    rows = np.arange(len(e_batch))
    losses = -(neg[rows, pos_idx] - shift[:, 0] - np.log(total))
    return losses, p


def infonce_loss_and_grads(model: EnergyModel, x_batch: np.ndarray, pos_idx: np.ndarray):
    """Mean per-scenario contrastive loss and its parameter gradients.

    x_batch has shape (B, M, 5); candidate order inside each scenario is
    arbitrary, pos_idx marks the positive.
    """
    b, m, d = x_batch.shape
    e_flat, acts = _forward_cached(model, x_batch.reshape(b * m, d))
    losses, p = _log_softmax_pos(e_flat.reshape(b, m), pos_idx)
    d_e = p.copy()
    d_e[np.arange(b), pos_idx] -= 1.0
    d_e /= b
    grads = _backward(model, acts, d_e.reshape(b * m).astype(x_batch.dtype))
    return float(losses.mean()), grads


def records_to_tensors(model: EnergyModel, records: list[ScenarioRecord], dtype=np.float64):
    """Normalized (N, M, 5) input tensor and positive indices for training."""
    n = len(records)
    m = len(records[0].candidates)
    x = np.empty((n, m, 5), dtype=dtype)
    pos = np.empty(n, dtype=np.int64)
    scale = model.norm.scale_vector().astype(dtype)
    for i, rec in enumerate(records):
        x[i, :, :4] = rec.s
        x[i, :, 4] = rec.candidates
        pos[i] = rec.pos
    x /= scale
    return x, pos


def infonce_loss(model: EnergyModel, records: list[ScenarioRecord]) -> float:
    """Mean per-scenario InfoNCE loss of a batch of records."""
    x, pos = records_to_tensors(model, records)
    b, m, d = x.shape
    e = model.forward(x.reshape(b * m, d)).reshape(b, m)
    losses, _ = _log_softmax_pos(e, pos)
    return float(losses.mean())


@dataclass
class TrainConfig:
    """Optimization schedule; the default budget matches a few-minute CPU run."""

    epochs: int = 800
    learning_rate: float = 1e-3
    lr_decay_every: int = 200
    lr_decay_factor: float = 0.5
    batch_size: int = 64
    seed: int = 0
    stop_loss: float | None = None   # optional early stop on epoch mean loss


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        out = []
        for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(params, grads, self.m, self.v):
            mw *= b1; mw += (1 - b1) * gw
            mb *= b1; mb += (1 - b1) * gb
            vw *= b2; vw += (1 - b2) * gw * gw
            vb *= b2; vb += (1 - b2) * gb * gb
            w = w - self.lr * (mw / corr1) / (np.sqrt(vw / corr2) + self.eps)
            b = b - self.lr * (mb / corr1) / (np.sqrt(vb / corr2) + self.eps)
            out.append((w, b))
        return out


def train(
    records: list[ScenarioRecord],
    config: TrainConfig,
    geom: TableGeometry,
    rng: np.random.Generator | None = None,
    hidden: tuple = DEFAULT_HIDDEN,
    verbose: bool = False,
) -> tuple[EnergyModel, list[float]]:
    """Mini-batch Adam on the contrastive loss; deterministic given the seed.

    Training runs in float32 for speed; the returned model is float64.

    Raises Diverged if the loss becomes non-finite.
    """
    if not records:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    model = init_model(geom, rng, hidden=hidden).astype(np.float32)
    x, pos = records_to_tensors(model, records, dtype=np.float32)
    n = len(records)
    opt = _Adam(model.weights, config.learning_rate)
    curve = []
    for epoch in range(config.epochs):
        opt.lr = config.learning_rate * config.lr_decay_factor ** (
            epoch // config.lr_decay_every
        )
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = infonce_loss_and_grads(model, x[idx], pos[idx])
            if not np.isfinite(loss):
                raise Diverged(f"loss became non-finite at epoch {epoch}")
            model.weights = opt.step(model.weights, grads)
            total += loss * len(idx)
        epoch_loss = total / n
        curve.append(epoch_loss)
        if verbose and (epoch % 25 == 0 or epoch == config.epochs - 1):
            print(f"epoch {epoch:4d}  loss {epoch_loss:.4f}  lr {opt.lr:.2e}")
        if config.stop_loss is not None and epoch_loss < config.stop_loss:
            break
    return model.astype(np.float64), curve


def softmax_neg_energy(e: np.ndarray) -> np.ndarray:
    """softmax(-E), invariant to adding a constant to all energies."""
    z = -(e - e.min())
    expd = np.exp(z)
    return expd / expd.sum()


@dataclass
class SamplerState:
    """Warm-startable particle set of the derivative-free optimizer."""

    particles: np.ndarray
    probs: np.ndarray
    sigma: float
    iteration: int = 0
    u_limit: float = DEFAULT_ANGLE_LIMIT
    best_u: float = field(default=0.0)
    best_energy: float = field(default=np.inf)


def sampler_init(
    n_particles: int,
    rng: np.random.Generator,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
    sigma_init: float = SIGMA_INIT,
) -> SamplerState:
    """Uniform particles over the action set with uniform probabilities."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    particles = rng.uniform(-u_limit, u_limit, n_particles)
    probs = np.full(n_particles, 1.0 / n_particles)
    return SamplerState(particles, probs, float(sigma_init), 0, u_limit)


def sampler_step(
    model: EnergyModel,
    s: np.ndarray,
    state: SamplerState,
    rng: np.random.Generator,
    sigma_decay: float = SIGMA_DECAY,
    sigma_min: float = SIGMA_MIN,
) -> tuple[float, SamplerState]:
    """One resample-perturb-score iteration of the shooting policy.

    Particles are multinomially resampled by their probabilities, jittered
    with the current exploration scale, clipped to the action set, and
    re-scored; the returned angle is the current most likely particle. The
    best particle ever seen is tracked separately for diagnostics.
    """
    n = len(state.particles)
    idx = rng.choice(n, size=n, p=state.probs)
    particles = state.particles[idx]
    if state.sigma > 0.0:
        particles = particles + rng.normal(0.0, state.sigma, n)
    particles = np.clip(particles, -state.u_limit, state.u_limit)
    e = energies(model, s, particles)
    probs = softmax_neg_energy(e)
    k = int(np.argmax(probs))
    u_hat = float(particles[k])
    best_u, best_e = state.best_u, state.best_energy
    if float(e.min()) < best_e:
        best_e = float(e.min())
        best_u = float(particles[int(np.argmin(e))])
    new_state = SamplerState(
        particles=particles,
        probs=probs,
        sigma=max(sigma_min, sigma_decay * state.sigma),
        iteration=state.iteration + 1,
        u_limit=state.u_limit,
        best_u=best_u,
        best_energy=best_e,
    )
    return u_hat, new_state


def infer(
    model: EnergyModel,
    s: np.ndarray,
    rng: np.random.Generator,
    n_particles: int = N_PARTICLES,
    n_iterations: int = N_ITERATIONS,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
    sigma_init: float = SIGMA_INIT,
    sigma_decay: float = SIGMA_DECAY,
    sigma_min: float = SIGMA_MIN,
) -> float:
    """Cold-start inference: init plus a fixed number of sampler iterations."""
    state = sampler_init(n_particles, rng, u_limit=u_limit, sigma_init=sigma_init)
    u_hat = float(state.particles[0])
    for _ in range(n_iterations):
        u_hat, state = sampler_step(
            model, s, state, rng, sigma_decay=sigma_decay, sigma_min=sigma_min
        )
    return u_hat


def save_weights(model: EnergyModel, path: str | Path, meta: dict | None = None) -> None:
    data = {
        "norm": {
            "pos_scale": list(model.norm.pos_scale),
            "vel_scale": model.norm.vel_scale,
            "u_scale": model.norm.u_scale,
        },
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in model.weights],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(data, sort_keys=True))


def load_weights(path: str | Path) -> EnergyModel:
    try:
        data = json.loads(Path(path).read_text())
        norm = Normalization(
            pos_scale=tuple(data["norm"]["pos_scale"]),
            vel_scale=float(data["norm"]["vel_scale"]),
            u_scale=float(data["norm"]["u_scale"]),
        )
        weights = [
            (np.asarray(layer["w"], dtype=float), np.asarray(layer["b"], dtype=float))
            for layer in data["layers"]
        ]
        return EnergyModel(weights, norm)
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactMismatch(f"malformed weights file {path}: {exc}") from exc
