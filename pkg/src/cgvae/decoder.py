"""Equivariant decoder p(x | X, z) with scalar, pseudoscalar, vector and pseudovector channels.

Channel types under an orthogonal map P (det -1 for reflections):

    H  -> H          scalars
    Hb -> det(P) Hb  pseudoscalars
    V  -> P V        vectors
    Vb -> det(P) P Vb  pseudovectors
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, ShapeError
from .nn import MLP, Module

N_FILTERS = 9


@dataclass
class DecoderState:
    H: Tensor      # (N, F)
    Hbar: Tensor   # (N, F)
    V: Tensor      # (N, F, 3)
    Vbar: Tensor   # (N, F, 3)


def initial_state(z, pseudo_init=False):
    z = ad.as_tensor(z)
    N, F = z.shape
    hbar = np.ones((N, F)) if pseudo_init else np.zeros((N, F))
    return DecoderState(z, Tensor(hbar), Tensor(np.zeros((N, F, 3))), Tensor(np.zeros((N, F, 3))))


class UpdateBlock(Module):
    """Gated scalar/vector update: mixes vector channels and couples them to scalars."""

    def __init__(self, rng, F):
        self.W_alpha = Tensor(rng.normal(0, 1 / np.sqrt(F), size=(F, F)), requires_grad=True)
        self.W_beta = Tensor(rng.normal(0, 1 / np.sqrt(F), size=(F, F)), requires_grad=True)
        self.L5 = MLP(rng, [2 * F, F, F])
        self.L5p = MLP(rng, [2 * F, F, F])
        self.L5pp = MLP(rng, [2 * F, F, F], init_scale=0.5)

    def __call__(self, H, V):
        Va = ad.channel_mix(self.W_alpha, V)
        Vb = ad.channel_mix(self.W_beta, V)
        s = ad.concat([H, ad.norm(Vb)], axis=-1)
        H_new = H + self.L5(s) + self.L5p(s) * ad.dot(Va, Vb)
        V_new = V + ad.vscale(self.L5pp(s), V)
        return H_new, V_new


class ConvLayer(Module):
    def __init__(self, rng, F, K):
        self.F = F
        self.rbf_net = MLP(rng, [K, F, N_FILTERS * F])
        self.node_net = MLP(rng, [F, F, N_FILTERS * F])
        self.update = UpdateBlock(rng, F)

    def filters(self, H, batch):
        HJ = ad.gather_rows(H, batch.cg_snd)
        W = self.rbf_net(batch.cg_rbf) * self.node_net(HJ)
        F = self.F
        return [W[:, k * F:(k + 1) * F] for k in range(N_FILTERS)], HJ

    def __call__(self, state: DecoderState, batch, cross_terms=True, force_w4=None):
        H, Hb, V, Vb = state.H, state.Hbar, state.V, state.Vbar
        N = H.shape[0]
        rcv, snd = batch.cg_rcv, batch.cg_snd
        (W1, W2, W3, W4, W5, W6, W7, W8, W9), HJ = self.filters(H, batch)
        if force_w4 is not None:
            W4 = Tensor(np.full(W4.shape, float(force_w4)))

        VI, VJ = ad.gather_rows(V, rcv), ad.gather_rows(V, snd)
        VbI, VbJ = ad.gather_rows(Vb, rcv), ad.gather_rows(Vb, snd)
        HbI = ad.gather_rows(Hb, rcv)

        dH = ad.segment_sum(W1 * HJ, rcv, N)
        dHb = ad.segment_sum(ad.dot(VI, VbJ), rcv, N)

        dV = (ad.vscale(W3 * HbI, VbJ) + ad.outer(W4, batch.cg_unit) + ad.vscale(W5, VJ))
        dVb = ad.vscale(W8, VbJ) + ad.vscale(W9 * HbI, VJ)
        if cross_terms:
            dV = dV + ad.vscale(W2, ad.cross(VI, VbJ))
            dVb = dVb + ad.vscale(W6, ad.cross(VI, VJ)) + ad.vscale(W7, ad.cross(VbI, VbJ))
        dV = ad.segment_sum(dV, rcv, N)
        dVb = ad.segment_sum(dVb, rcv, N)

        H_new, V_new = self.update(H + dH, V + dV)
        return DecoderState(H_new, Hb + dHb, V_new, Vb + dVb)


def channel_select(V, batch):
    """Displacement of atom i = vector channel Index(i, C_m(i)) of bead m(i)."""
    V = ad.as_tensor(V)
    NB, F, _ = V.shape
    if batch.chan_in_bead.max() >= F:
        raise CapacityError(f"a bead needs channel {batch.chan_in_bead.max()} but only {F} exist")
    flat = ad.reshape(V, (NB * F, 3))
    return ad.gather_rows(flat, batch.assign * F + batch.chan_in_bead)


def compile_coordinates(dx, batch):
    """x = M+ X + dx - M+ M dx, which reprojects exactly onto X."""
    dx = ad.as_tensor(dx)
    if dx.shape != (batch.assign.size, 3):
        raise ShapeError("displacements do not match the batch")
    bead_mean = ad.segment_sum(ad.vscale(batch.wnorm, dx), batch.assign, batch.X.shape[0])
    return batch.X[batch.assign] + dx - ad.gather_rows(bead_mean, batch.assign)


class Decoder(Module):
    def __init__(self, rng, F=32, K=8, depth=3, pseudo_init=False, cross_terms=True):
        self.F = F
        self.pseudo_init = pseudo_init
        self.cross_terms = cross_terms
        self.layers = [ConvLayer(rng, F, K) for _ in range(depth)]

    def vectors(self, z, batch):
        state = initial_state(z, self.pseudo_init)
        for layer in self.layers:
            state = layer(state, batch, cross_terms=self.cross_terms)
        return state.V

    def __call__(self, z, batch):
        return compile_coordinates(channel_select(self.vectors(z, batch), batch), batch)


def planarity_probe(samples, X, tol=1e-8):
    """Largest distance of any sampled atom from the plane through three beads.

    Returns None when the probe does not apply: fewer than three beads, collinear beads,
    or more than three beads that are not coplanar.
    """
    X = np.asarray(X, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if X.shape[0] < 3:
        return None
    centered = X - X.mean(0)
    _, s, vt = np.linalg.svd(centered)
    scale = max(s[0], 1e-300)
    if s[1] < tol * scale or (X.shape[0] > 3 and s[2] > tol * scale):
        return None
    normal = vt[2]
    return float(np.abs((samples - X.mean(0)) @ normal).max())
