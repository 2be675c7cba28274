"""Optimization loop, plateau scheduling, checkpoints and the reconstruct/sample entry points."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .geometry import CGMapping
from .model import CGVAE, LossWeights, ModelConfig
from .nn import Adam

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "L_MSD", "L_graph", "KL", "LR")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    patience: int = 15
    factor: float = 0.3
    min_lr: float = 1e-7
    val_fraction: float = 0.1
    seed: int = 0
    grad_clip: float = 0.0  # global gradient-norm cap; 0 disables
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs must be >= 0, batch_size and patience >= 1")
        if not 0.0 < self.factor < 1.0:
            raise ConfigError("scheduler factor must lie in (0, 1)")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be nonnegative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


# ---------------------------------------------------------------- scheduling

class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without relative improvement > threshold."""

    def __init__(self, lr, patience=15, factor=0.3, threshold=1e-4, min_lr=1e-7):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, value):
        if not np.isfinite(self.best) or value < self.best - self.threshold * abs(self.best):
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def plateau_scheduler(history, lr=1e-3, patience=15, factor=0.3, threshold=1e-4, min_lr=1e-7):
    """LR after replaying a validation-loss history through the plateau rule."""
    sched = PlateauScheduler(lr, patience, factor, threshold, min_lr)
    for v in history:
        sched.step(v)
    return sched.lr


# ---------------------------------------------------------------- steps

def _check_finite(parts):
    if not all(np.isfinite(v) for v in parts.values()):
        raise TrainingDivergedError(f"non-finite loss {parts}")


def clip_grad_norm(params, max_norm):
    """Scale all gradients down together so their joint norm is at most ``max_norm``; returns the norm before."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def train_step(model, opt: Adam, batch, rng, weights: LossWeights, grad_clip=0.0):
    """One Adam update on the batch-mean objective with reparameterized latents."""
    noise = rng.standard_normal((batch.B * batch.N, model.config.F))
    with ad.fresh_tape():
        total, parts = model.loss(batch, noise, weights)
        _check_finite(parts)
        opt.zero_grad()
        ad.backward(total)
    if grad_clip > 0:
        clip_grad_norm(opt.params, grad_clip)
    opt.step()
    return parts


def evaluate_loss(model, batch, weights: LossWeights):
    """Objective with z at the posterior mean (no sampling noise)."""
    with ad.no_grad():
        _, parts = model.loss(batch, np.zeros((batch.B * batch.N, model.config.F)), weights)
    return parts


def split_indices(n_frames, val_fraction, seed):
    perm = np.random.default_rng(seed).permutation(n_frames)
    n_val = int(round(val_fraction * n_frames))
    if n_frames > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), n_frames - 1)
    else:
        n_val = 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class TrainResult:
    history: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    final_lr: float


def _batches(feats, model, idx, size):
    for start in range(0, len(idx), size):
        yield model.collate([feats[i] for i in idx[start:start + size]])


def train(model: CGVAE, frames, cfg: TrainConfig, log_path=None, feats=None, callback=None) -> TrainResult:
    """Adam with plateau scheduling on the validation objective; ``callback(row)`` runs after each epoch."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[1:] != (model.mapping.n, 3):
        raise ShapeError(f"frames must be (T, {model.mapping.n}, 3), got {frames.shape}")
    train_idx, val_idx = split_indices(len(frames), cfg.val_fraction, cfg.seed)
    if feats is None:
        feats = model.featurize(frames)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    sched = PlateauScheduler(cfg.learning_rate, cfg.patience, cfg.factor, min_lr=cfg.min_lr)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(train_idx)
            sums = {"msd": 0.0, "graph": 0.0, "kl": 0.0, "total": 0.0}
            n_batches = 0
            for batch in _batches(feats, model, order, cfg.batch_size):
                parts = train_step(model, opt, batch, rng, cfg.weights, cfg.grad_clip)
                for k in sums:
                    sums[k] += parts[k]
                n_batches += 1
            means = {k: v / max(n_batches, 1) for k, v in sums.items()}
            if len(val_idx):
                vparts = [evaluate_loss(model, b, cfg.weights)["total"]
                          for b in _batches(feats, model, val_idx, cfg.batch_size)]
                val = float(np.mean(vparts))
            else:
                val = means["total"]
            lr = opt.lr
            row = {"epoch": epoch, **means, "val": val, "lr": lr}
            history.append(row)
            if writer:
                writer.writerow([epoch, f"{means['msd']:.8g}", f"{means['graph']:.8g}",
                                 f"{means['kl']:.8g}", f"{lr:.8g}"])
                fh.flush()
            log.info("epoch %d msd %.4f graph %.4f kl %.4f val %.4f lr %.2g",
                     epoch, means["msd"], means["graph"], means["kl"], val, lr)
            opt.lr = sched.step(val)
            if callback is not None:
                callback(row)
    finally:
        if fh:
            fh.close()
    return TrainResult(history, train_idx, val_idx, opt.lr)


# ---------------------------------------------------------------- inference

def reconstruct(model: CGVAE, frames, batch_size=64):
    """Deterministic reconstruction with z at the posterior mean; returns (T, n, 3)."""
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, model.mapping.n, 3)
    out = []
    for start in range(0, len(frames), batch_size):
        batch = model.collate(model.featurize(frames[start:start + batch_size]))
        out.append(model.reconstruct_batch(batch))
    return np.concatenate(out) if out else np.zeros((0, model.mapping.n, 3))


def sample(model: CGVAE, cg_frames, count=32, seed=0, batch_size=64):
    """``count`` prior draws per CG frame; returns (T, count, n, 3)."""
    cg_frames = np.asarray(cg_frames, dtype=np.float64).reshape(-1, model.mapping.N, 3)
    rng = np.random.default_rng(seed)
    out = []
    for start in range(0, len(cg_frames), batch_size):
        batch = model.collate(model.featurize_cg(cg_frames[start:start + batch_size]))
        out.append(np.swapaxes(model.sample_batch(batch, rng, count), 0, 1))
    return np.concatenate(out) if out else np.zeros((0, count, model.mapping.n, 3))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: CGVAE, cfg: TrainConfig = None):
    state = model.state_dict()
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": model.config.to_dict(),
        "train": cfg.to_dict() if cfg is not None else None,
        "elements": list(model.elements),
        "shapes": {k: list(v.shape) for k, v in state.items()},
    }
    arrays = {f"param/{k}": v for k, v in state.items()}
    arrays["mapping/assign"] = model.mapping.assign
    arrays["mapping/weights"] = model.mapping.weights
    arrays["pairs"] = model.pairs
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, TrainConfig or None)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        mapping = CGMapping(z["mapping/assign"], z["mapping/weights"])
        model = CGVAE(ModelConfig(**meta["model"]), meta["elements"], mapping, z["pairs"])
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    for k, shape in meta["shapes"].items():
        if list(state[k].shape) != shape:
            raise ShapeError(f"checkpoint array {k} has shape {state[k].shape}, header says {shape}")
    model.load_state_dict(state)
    cfg = TrainConfig.from_dict(meta["train"]) if meta["train"] else None
    return model, cfg


# ---------------------------------------------------------------- gradient check

def _leaf_loss(model, batch, noise, weights):
    with ad.no_grad():
        total, _ = model.loss(batch, noise, weights)
    return total.item()


# tried in order; a correct gradient agrees at some step, a wrong one at none
FD_STEPS = (1e-4, 1e-3, 1e-5, 1e-2, 1e-6)


def _five_point(model, batch, noise, weights, p, idx, h):
    orig = p.data[idx]
    vals = []
    for step in (2 * h, h, -h, -2 * h):
        p.data[idx] = orig + step
        vals.append(_leaf_loss(model, batch, noise, weights))
    p.data[idx] = orig
    # differences first so that a flat loss gives exactly zero
    return (8 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12 * h)


def gradcheck(model: CGVAE, batch, noise, weights: LossWeights, steps=FD_STEPS, probes=1, tol=1e-4):
    """Relative error of the analytic gradient against five-point differences, per parameter leaf.

    Each leaf is probed at its ``probes`` largest-|grad| entries.  Roundoff favors large steps
    for tiny gradients and curvature favors small ones, so each entry takes the best step of
    the ladder, stopping early once the error is below ``tol / 10``.
    """
    with ad.fresh_tape():
        model.zero_grad()
        total, _ = model.loss(batch, noise, weights)
        ad.backward(total)
    errors = {}
    for name, p in model.named_parameters().items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = 0.0
        for f in np.argsort(-np.abs(g).ravel())[:probes]:
            idx = np.unravel_index(f, p.shape)
            best = np.inf
            for h in steps:
                fd = _five_point(model, batch, noise, weights, p, idx, h)
                best = min(best, abs(fd - g[idx]) / max(abs(g[idx]), abs(fd), 1e-8))
                if best < tol / 10:
                    break
            worst = max(worst, best)
        errors[name] = worst
    model.zero_grad()
    return errors


def gradcheck_instance(seed=0):
    """The 6-atom / 2-bead instance used by the CLI and the test suite."""
    rng = np.random.default_rng(seed)
    elements = ("C", "C", "H", "O", "H", "N")
    mapping = CGMapping.from_assignment([0, 0, 0, 1, 1, 1], "mass", elements)
    x = rng.normal(0.0, 1.0, size=(6, 3))
    cfg = ModelConfig(F=8, K=4, enc_depth=1, prior_depth=1, dec_depth=2,
                      fg_cutoff=10.0, cg_cutoff=10.0, pseudo_init=True, seed=seed)
    pairs = np.array([(i, j) for i in range(6) for j in range(i + 1, 6)])
    model = CGVAE(cfg, elements, mapping, pairs)
    batch = model.collate(model.featurize([x]))
    noise = rng.standard_normal((mapping.N, cfg.F))
    return model, batch, noise


def run_gradcheck(seed=0, tol=1e-4):
    model, batch, noise = gradcheck_instance(seed)
    errors = gradcheck(model, batch, noise, LossWeights(), tol=tol)
    return all(e < tol for e in errors.values()), errors


def loss_log_rows(path):
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
