"""Per-frame graph featurization and batching of frames into one disjoint graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ShapeError
from .geometry import ELEMENTS, CGMapping, project
from .graphs import (RbfConfig, fg_to_cg_arcs, induced_cg_graph, radius_graph, rbf_features,
                     unit_vectors)


def one_hot(elements):
    table = {e: i for i, e in enumerate(ELEMENTS)}
    out = np.zeros((len(elements), len(ELEMENTS)))
    out[np.arange(len(elements)), [table[e] for e in elements]] = 1.0
    return out


@dataclass
class FrameFeatures:
    """Graphs and edge features of one frame.  FG fields are None when only X is known."""

    X: np.ndarray
    cg_snd: np.ndarray
    cg_rcv: np.ndarray
    cg_rbf: np.ndarray
    cg_unit: np.ndarray
    x: np.ndarray = None
    fg_snd: np.ndarray = None
    fg_rcv: np.ndarray = None
    fg_rbf: np.ndarray = None
    pool_rbf: np.ndarray = None
    enc_snd: np.ndarray = None
    enc_rcv: np.ndarray = None
    enc_rbf: np.ndarray = None


def cg_only_features(X, cg_cutoff, K):
    """Bead graph built from X alone: all bead pairs closer than the CG cutoff."""
    X = np.asarray(getattr(X, "coords", X), dtype=np.float64)
    g = radius_graph(X, cg_cutoff)
    rbf = rbf_features(g.distances, RbfConfig(K, cg_cutoff)) if g.num_arcs else np.zeros((0, K))
    unit = unit_vectors(g, X) if g.num_arcs else np.zeros((0, 3))
    return FrameFeatures(X=X, cg_snd=g.senders, cg_rcv=g.receivers, cg_rbf=rbf, cg_unit=unit)


def frame_features(x, mapping: CGMapping, fg_cutoff, cg_cutoff, K, X=None):
    x = np.asarray(getattr(x, "coords", x), dtype=np.float64)
    if x.shape != (mapping.n, 3):
        raise ShapeError(f"frame has shape {x.shape}, mapping expects {mapping.n} atoms")
    if X is None:
        X = project(x, mapping).coords
    feats = cg_only_features(X, cg_cutoff, K)
    fg = radius_graph(x, fg_cutoff)
    feats.x = x
    feats.fg_snd, feats.fg_rcv = fg.senders, fg.receivers
    feats.fg_rbf = rbf_features(fg.distances, RbfConfig(K, fg_cutoff)) if fg.num_arcs else np.zeros((0, K))
    _, _, d_pool = fg_to_cg_arcs(mapping, x, X)
    feats.pool_rbf = rbf_features(d_pool, RbfConfig(K, cg_cutoff), allow_zero=True)
    enc = induced_cg_graph(fg, mapping, X)
    feats.enc_snd, feats.enc_rcv = enc.senders, enc.receivers
    feats.enc_rbf = rbf_features(enc.distances, RbfConfig(K, cg_cutoff)) if enc.num_arcs else np.zeros((0, K))
    return feats


@dataclass
class Batch:
    """B frames sharing one mapping, flattened into a single disjoint graph."""

    B: int
    n: int
    N: int
    X: np.ndarray          # (B*N, 3)
    assign: np.ndarray     # (B*n,) global bead index per atom
    wnorm: np.ndarray      # (B*n,) normalized projection weights
    chan_in_bead: np.ndarray  # (B*n,) Index(i, C_m(i))
    onehot: np.ndarray     # (B*n, 5)
    cg_snd: np.ndarray
    cg_rcv: np.ndarray
    cg_rbf: np.ndarray
    cg_unit: np.ndarray
    pairs: np.ndarray      # (P, 2) multi-hop pairs for the graph loss
    x: np.ndarray = None   # (B*n, 3)
    fg_snd: np.ndarray = None
    fg_rcv: np.ndarray = None
    fg_rbf: np.ndarray = None
    pool_rbf: np.ndarray = None
    enc_snd: np.ndarray = None
    enc_rcv: np.ndarray = None
    enc_rbf: np.ndarray = None

    @property
    def has_fg(self):
        return self.x is not None


def _cat_arcs(frames, snd_attr, rcv_attr, offset):
    snd = [getattr(f, snd_attr) + k * offset for k, f in enumerate(frames)]
    rcv = [getattr(f, rcv_attr) + k * offset for k, f in enumerate(frames)]
    return np.concatenate(snd).astype(np.int64), np.concatenate(rcv).astype(np.int64)


def collate(frames, mapping: CGMapping, elements, pairs=None):
    B, n, N = len(frames), mapping.n, mapping.N
    onehot = one_hot(elements)
    cg_snd, cg_rcv = _cat_arcs(frames, "cg_snd", "cg_rcv", N)
    chan = mapping.channel_index()
    if pairs is None:
        pairs = np.zeros((0, 2), dtype=np.int64)
    gpairs = (np.asarray(pairs, dtype=np.int64)[None, :, :] + (np.arange(B) * n)[:, None, None]).reshape(-1, 2)
    batch = Batch(
        B=B, n=n, N=N,
        X=np.concatenate([f.X for f in frames]),
        assign=np.tile(mapping.assign, B) + np.repeat(np.arange(B) * N, n),
        wnorm=np.tile(mapping.normalized_weights(), B),
        chan_in_bead=np.tile(chan, B),
        onehot=np.tile(onehot, (B, 1)),
        cg_snd=cg_snd, cg_rcv=cg_rcv,
        cg_rbf=np.concatenate([f.cg_rbf for f in frames]),
        cg_unit=np.concatenate([f.cg_unit for f in frames]),
        pairs=gpairs,
    )
    if all(f.x is not None for f in frames):
        batch.x = np.concatenate([f.x for f in frames])
        batch.fg_snd, batch.fg_rcv = _cat_arcs(frames, "fg_snd", "fg_rcv", n)
        batch.fg_rbf = np.concatenate([f.fg_rbf for f in frames])
        batch.pool_rbf = np.concatenate([f.pool_rbf for f in frames])
        batch.enc_snd, batch.enc_rcv = _cat_arcs(frames, "enc_snd", "enc_rcv", N)
        batch.enc_rbf = np.concatenate([f.enc_rbf for f in frames])
    return batch


def check_capacity(mapping: CGMapping, F):
    sizes = mapping.bead_sizes()
    if sizes.max() > F:
        raise CapacityError(f"bead with {sizes.max()} atoms exceeds {F} vector channels")
