"""Reconstruction losses and the Gaussian KL term."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, ShapeError


def loss_msd(x_pred, x_ref):
    """Mean over atoms of the squared Euclidean distance (Angstrom^2)."""
    x_pred = ad.as_tensor(x_pred)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_pred.shape != x_ref.shape:
        raise ShapeError(f"{x_pred.shape} vs {x_ref.shape}")
    n_atoms = x_ref.shape[0] if x_ref.ndim == 2 else int(np.prod(x_ref.shape[:-1]))
    return ad.scale(ad.tsum(ad.square(x_pred - x_ref)), 1.0 / n_atoms)


def loss_graph(x_pred, x_ref, pairs):
    """Mean squared discrepancy of pair distances over the edge set."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ConfigError("graph loss needs a nonempty edge set")
    x_pred = ad.as_tensor(x_pred)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    d_ref = np.linalg.norm(x_ref[pairs[:, 0]] - x_ref[pairs[:, 1]], axis=-1)
    d_pred = ad.norm(ad.gather_rows(x_pred, pairs[:, 0]) - ad.gather_rows(x_pred, pairs[:, 1]))
    return ad.scale(ad.tsum(ad.square(d_pred - d_ref)), 1.0 / pairs.shape[0])


def kl_diag_gaussians(q, p):
    """KL(q || p) summed over beads and features, for diagonal Gaussian fields."""
    mq, sq = ad.as_tensor(q.mu), ad.as_tensor(q.sigma)
    mp, sp = ad.as_tensor(p.mu), ad.as_tensor(p.sigma)
    if np.any(sq.data <= 0) or np.any(sp.data <= 0):
        raise DomainError("Gaussian scales must be positive")
    var_p = ad.square(sp)
    terms = (ad.log(sp) - ad.log(sq)
             + (ad.square(sq) + ad.square(mq - mp)) / ad.scale(var_p, 2.0)
             - 0.5)
    return ad.tsum(terms)
