"""Linear and MLP backmapping baselines and the Gumbel-softmax mapping learner."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .geometry import CGMapping, lift_matrix, project_batch
from .losses import loss_graph, loss_msd
from .nn import MLP, Adam, Module


def bead_center(X, mapping: CGMapping):
    """Weighted center of the molecule computed from beads alone (equals the atomic weighted center)."""
    totals = np.bincount(mapping.assign, weights=mapping.weights, minlength=mapping.N)
    return np.tensordot(totals / totals.sum(), X, axes=([0], [-2]))


class LinearBackmap(Module):
    """x = D (X - c) + c with a learnable n x N matrix D, initialized to the lift operator."""

    stochastic = False

    def __init__(self, mapping: CGMapping):
        self.mapping = mapping
        self.D = Tensor(lift_matrix(mapping), requires_grad=True)

    def forward(self, X):
        """(B, N, 3) bead frames -> (B*n, 3) Tensor."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != self.mapping.N:
            raise ShapeError(f"expected (B, {self.mapping.N}, 3), got {X.shape}")
        B = X.shape[0]
        c = bead_center(X, self.mapping)
        Xc = np.transpose(X - c[:, None, :], (1, 0, 2)).reshape(self.mapping.N, 3 * B)
        out = ad.matmul(self.D, Xc)
        out = ad.reshape(ad.transpose(ad.reshape(out, (self.mapping.n, B, 3)), (1, 0, 2)),
                         (B * self.mapping.n, 3))
        return out + np.repeat(c, self.mapping.n, axis=0)


class MlpBackmap(Module):
    """Perceptron 3N -> 3n -> 3n -> 3n (ReLU) on flattened, recentered bead coordinates."""

    stochastic = False

    def __init__(self, mapping: CGMapping, seed=0):
        rng = np.random.default_rng(seed)
        n, N = mapping.n, mapping.N
        self.mapping = mapping
        self.net = MLP(rng, [3 * N, 3 * n, 3 * n, 3 * n], activation="relu")

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != self.mapping.N:
            raise ShapeError(f"expected (B, {self.mapping.N}, 3), got {X.shape}")
        B = X.shape[0]
        c = bead_center(X, self.mapping)
        out = self.net((X - c[:, None, :]).reshape(B, -1))
        return ad.reshape(out, (B * self.mapping.n, 3)) + np.repeat(c, self.mapping.n, axis=0)


def linear_backmap(X, model: LinearBackmap):
    X = np.asarray(X, dtype=np.float64)
    with ad.no_grad():
        return model.forward(X[None]).data.reshape(model.mapping.n, 3)


def mlp_backmap(X, model: MlpBackmap):
    X = np.asarray(X, dtype=np.float64)
    with ad.no_grad():
        return model.forward(X[None]).data.reshape(model.mapping.n, 3)


@dataclass
class BaselineTrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    gamma: float = 5.0
    seed: int = 0


def train_baseline(model, frames, pairs, cfg: BaselineTrainConfig = BaselineTrainConfig()):
    """Fit a baseline on L_MSD + gamma L_graph; returns per-epoch mean losses."""
    frames = np.asarray(frames, dtype=np.float64)
    mapping = model.mapping
    X_all = project_batch(frames, mapping)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(frames))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            B = len(idx)
            x_ref = frames[idx].reshape(B * mapping.n, 3)
            gpairs = (pairs[None] + (np.arange(B) * mapping.n)[:, None, None]).reshape(-1, 2)
            with ad.fresh_tape():
                pred = model.forward(X_all[idx])
                loss = loss_msd(pred, x_ref)
                if cfg.gamma and gpairs.size:
                    loss = loss + ad.scale(loss_graph(pred, x_ref, gpairs), cfg.gamma)
                if not np.isfinite(loss.item()):
                    raise TrainingDivergedError("baseline loss is not finite")
                opt.zero_grad()
                ad.backward(loss)
            opt.step()
            total += loss.item()
        history.append(total / max(1, -(-len(order) // cfg.batch_size)))
    return history


class DeterministicBackmapper:
    """Adapter giving a baseline the reconstruct/sample interface used by evaluation."""

    stochastic = False

    def __init__(self, model):
        self.model = model
        self.mapping = model.mapping

    def reconstruct(self, frames):
        frames = np.asarray(frames, dtype=np.float64)
        return self.backmap(project_batch(frames, self.mapping))

    def backmap(self, X):
        X = np.asarray(X, dtype=np.float64)
        with ad.no_grad():
            out = self.model.forward(X).data
        return out.reshape(X.shape[0], self.mapping.n, 3)

    def sample(self, X, count=32, seed=0):
        out = self.backmap(X)
        return np.repeat(out[:, None], count, axis=1)


# ---------------------------------------------------------------- AutoGrain

@dataclass
class AutoGrainConfig:
    epochs: int = 1500
    tau_start: float = 1.0
    tau_min: float = 0.025
    tau_decay: float = 0.001
    geo_weight: float = 0.25
    learning_rate: float = 0.05
    max_frames: int = 1000       # random subset used for fitting; 0 keeps every frame
    seed: int = 0


@dataclass
class AutoGrainResult:
    mapping: CGMapping
    logits: np.ndarray
    soft: np.ndarray                      # final soft assignment (n, N)
    losses: list = field(default_factory=list)
    max_row_entry: list = field(default_factory=list)


def temperature(epoch, cfg: AutoGrainConfig):
    return max(cfg.tau_start - cfg.tau_decay * epoch, cfg.tau_min)


def repair_empty_beads(assign, N, frames):
    """Give every empty bead the atom of the largest bead lying farthest from that bead's center."""
    assign = np.array(assign, dtype=np.int64)
    mean_x = np.asarray(frames, dtype=np.float64).reshape(-1, assign.size, 3)
    while True:
        counts = np.bincount(assign, minlength=N)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            return assign
        big = int(np.argmax(counts))
        members = np.flatnonzero(assign == big)
        center = mean_x[:, members].mean(axis=1, keepdims=True)
        dist = np.linalg.norm(mean_x[:, members] - center, axis=-1).mean(0)
        assign[members[int(np.argmax(dist))]] = int(empty[0])


def mapping_losses(C, D, xmat):
    """(reconstruction MSD of D M x, geometric MSD of C M x) for soft assignment C (n, N).

    ``xmat`` holds centered frames as an (n, 3T) matrix; both terms are per atom and frame.
    """
    C, D = ad.as_tensor(C), ad.as_tensor(D)
    scale = 3.0 / xmat.size
    M = ad.transpose(C / ad.tsum(C, axis=0), (1, 0))
    X = ad.matmul(M, xmat)
    msd = ad.scale(ad.tsum(ad.square(ad.matmul(D, X) - xmat)), scale)
    geo = ad.scale(ad.tsum(ad.square(ad.matmul(C, X) - xmat)), scale)
    return msd, geo


def autograin_fit(frames, N, cfg: AutoGrainConfig = AutoGrainConfig()) -> AutoGrainResult:
    """Learn a hard atom-to-bead assignment from a trajectory with a Gumbel-softmax relaxation."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError("frames must be (T, n, 3)")
    T, n, _ = frames.shape
    if N >= n or N < 1:
        raise ConfigError(f"cannot learn {N} beads for {n} atoms")
    rng = np.random.default_rng(cfg.seed)
    if 0 < cfg.max_frames < T:
        frames = frames[np.sort(rng.choice(T, cfg.max_frames, replace=False))]
        T = cfg.max_frames
    x = frames - frames.mean(axis=1, keepdims=True)
    xmat = np.transpose(x, (1, 0, 2)).reshape(n, 3 * T)

    logits = Tensor(rng.normal(0.0, 0.01, size=(n, N)), requires_grad=True)
    D = Tensor(np.eye(N)[np.argmax(logits.data, axis=1)], requires_grad=True)
    opt = Adam([logits, D], lr=cfg.learning_rate)
    losses, max_entry = [], []
    soft = None
    for epoch in range(cfg.epochs):
        tau = temperature(epoch, cfg)
        u = rng.uniform(1e-12, 1.0, size=(n, N))
        gumbel = -np.log(-np.log(u))
        with ad.fresh_tape():
            C = ad.softmax(ad.scale(logits + gumbel, 1.0 / tau), axis=1)
            msd, geo = mapping_losses(C, D, xmat)
            loss = msd + ad.scale(geo, cfg.geo_weight)
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError("mapping loss is not finite")
            opt.zero_grad()
            ad.backward(loss)
        opt.step()
        soft = C.data
        losses.append(loss.item())
        max_entry.append(float(soft.max(axis=1).min()))
    assign = repair_empty_beads(np.argmax(logits.data, axis=1), N, frames)
    return AutoGrainResult(CGMapping.from_assignment(assign, "uniform", n_beads=N),
                           logits.data.copy(), soft, losses, max_entry)
