"""Invariant posterior encoder q(z | x, X) and CG prior p(z | X)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import ELEMENTS
from .nn import MLP, Linear, Module

SIGMA_FLOOR = 1e-6
SIGMA_INIT = 0.1


@dataclass
class GaussianField:
    """Per-bead diagonal Gaussian over the latent features."""

    mu: Tensor
    sigma: Tensor

    @property
    def shape(self):
        return self.mu.shape


def _filter_net(rng, K, F):
    return MLP(rng, [K, F, F])


def _node_net(rng, F):
    return MLP(rng, [F, F, F])


class GaussianHeads(Module):
    def __init__(self, rng, F, sigma_init=SIGMA_INIT):
        self.mu = MLP(rng, [F, F, F])
        self.sigma = MLP(rng, [F, F, F])
        # start with narrow Gaussians so early decoder updates see the latent signal
        last = self.sigma.layers[-1]
        last.weight.data *= 0.1
        last.bias.data[:] = np.log(np.expm1(sigma_init))

    def __call__(self, H):
        return GaussianField(self.mu(H), ad.softplus(self.sigma(H)) + SIGMA_FLOOR)


class EncoderLayer(Module):
    """One round of FG message passing, FG -> CG pooling and CG message passing."""

    def __init__(self, rng, F, K):
        self.fg_filter = _filter_net(rng, K, F)
        self.fg_node = _node_net(rng, F)
        self.pool_filter = _filter_net(rng, K, F)
        self.pool_node = _node_net(rng, F)
        self.cg_filter = _filter_net(rng, K, F)
        self.cg_node = _node_net(rng, F)

    def __call__(self, h, H, batch):
        n_atoms, n_beads = h.shape[0], H.shape[0]
        msg = self.fg_filter(batch.fg_rbf) * self.fg_node(
            ad.gather_rows(h, batch.fg_rcv) * ad.gather_rows(h, batch.fg_snd))
        h = h + ad.segment_sum(msg, batch.fg_rcv, n_atoms)

        pooled = self.pool_filter(batch.pool_rbf) * self.pool_node(h)
        H_pool = H + ad.segment_sum(pooled, batch.assign, n_beads)

        msg = self.cg_filter(batch.enc_rbf) * self.cg_node(
            ad.gather_rows(H_pool, batch.enc_rcv) * ad.gather_rows(H_pool, batch.enc_snd))
        H = H + ad.segment_sum(msg, batch.enc_rcv, n_beads)
        return h, H


class Encoder(Module):
    def __init__(self, rng, F=32, K=8, depth=2):
        self.F = F
        self.embed = Linear(rng, len(ELEMENTS), F, bias=False)
        self.layers = [EncoderLayer(rng, F, K) for _ in range(depth)]
        self.heads = GaussianHeads(rng, F)

    def __call__(self, batch) -> GaussianField:
        h = self.embed(batch.onehot)
        H = Tensor(np.zeros((batch.B * batch.N, self.F)))
        for layer in self.layers:
            h, H = layer(h, H, batch)
        return self.heads(H)


class PriorLayer(Module):
    def __init__(self, rng, F, K):
        self.filter = _filter_net(rng, K, F)
        self.node = _node_net(rng, F)

    def __call__(self, H, batch):
        msg = self.filter(batch.cg_rbf) * self.node(
            ad.gather_rows(H, batch.cg_rcv) * ad.gather_rows(H, batch.cg_snd))
        return H + ad.segment_sum(msg, batch.cg_rcv, H.shape[0])


class Prior(Module):
    """Bead embeddings start from the pooled one-hot atom types of each bead."""

    def __init__(self, rng, F=32, K=8, depth=2):
        self.F = F
        self.embed = Linear(rng, len(ELEMENTS), F, bias=False)
        self.layers = [PriorLayer(rng, F, K) for _ in range(depth)]
        self.heads = GaussianHeads(rng, F)

    def __call__(self, batch) -> GaussianField:
        counts = ad.segment_sum(batch.onehot, batch.assign, batch.B * batch.N)
        H = self.embed(counts)
        for layer in self.layers:
            H = layer(H, batch)
        return self.heads(H)


def reparameterize(g: GaussianField, noise) -> Tensor:
    """z = mu + sigma * eps."""
    return g.mu + g.sigma * ad.as_tensor(noise)
