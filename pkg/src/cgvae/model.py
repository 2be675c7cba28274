"""The CGVAE model: posterior encoder, prior and equivariant decoder bound to one molecule and mapping."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .decoder import Decoder
from .encoder import Encoder, GaussianField, Prior, reparameterize
from .features import cg_only_features, check_capacity, collate, frame_features
from .geometry import CGMapping
from .losses import kl_diag_gaussians, loss_graph, loss_msd
from .nn import Module


@dataclass
class ModelConfig:
    F: int = 32
    K: int = 8
    enc_depth: int = 2
    prior_depth: int = 2
    dec_depth: int = 3
    fg_cutoff: float = 4.0
    cg_cutoff: float = 12.0
    pseudo_init: bool = False
    cross_terms: bool = True
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class LossWeights:
    gamma: float = 25.0
    beta: float = 0.05

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("loss weights must be nonnegative")


class CGVAE(Module):
    def __init__(self, config: ModelConfig, elements, mapping: CGMapping, pairs):
        check_capacity(mapping, config.F)
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.elements = tuple(elements)
        self.mapping = mapping
        self.pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self.encoder = Encoder(rng, config.F, config.K, config.enc_depth)
        self.prior = Prior(rng, config.F, config.K, config.prior_depth)
        self.decoder = Decoder(rng, config.F, config.K, config.dec_depth,
                               pseudo_init=config.pseudo_init, cross_terms=config.cross_terms)

    # -- featurization
    def featurize(self, frames):
        c = self.config
        return [frame_features(x, self.mapping, c.fg_cutoff, c.cg_cutoff, c.K) for x in frames]

    def featurize_cg(self, cg_frames):
        c = self.config
        return [cg_only_features(X, c.cg_cutoff, c.K) for X in cg_frames]

    def collate(self, feats):
        return collate(feats, self.mapping, self.elements, self.pairs)

    # -- forward pieces
    def posterior(self, batch) -> GaussianField:
        return self.encoder(batch)

    def prior_field(self, batch) -> GaussianField:
        return self.prior(batch)

    def decode(self, z, batch):
        return self.decoder(z, batch)

    def loss(self, batch, noise, weights: LossWeights):
        """Total objective L_MSD + gamma L_graph + beta KL (KL averaged per frame)."""
        q = self.posterior(batch)
        p = self.prior_field(batch)
        z = reparameterize(q, noise)
        x_pred = self.decode(z, batch)
        msd = loss_msd(x_pred, batch.x)
        graph = loss_graph(x_pred, batch.x, batch.pairs) if batch.pairs.size else ad.Tensor(0.0)
        kl = ad.scale(kl_diag_gaussians(q, p), 1.0 / batch.B)
        total = msd + ad.scale(graph, weights.gamma) + ad.scale(kl, weights.beta)
        parts = {"msd": msd.item(), "graph": graph.item(), "kl": kl.item(), "total": total.item()}
        return total, parts

    def reconstruct_batch(self, batch):
        with ad.no_grad():
            q = self.posterior(batch)
            x = self.decode(q.mu, batch)
        return x.data.reshape(batch.B, batch.n, 3)

    def sample_batch(self, batch, rng, count=1):
        """``count`` prior draws per frame -> array (count, B, n, 3)."""
        out = []
        with ad.no_grad():
            p = self.prior_field(batch)
            for _ in range(count):
                eps = rng.standard_normal(p.mu.shape)
                z = p.mu.data + p.sigma.data * eps
                out.append(self.decode(z, batch).data.reshape(batch.B, batch.n, 3))
        return np.stack(out)
