"""Synthetic conformer trajectories of saturated chains, sampled with Metropolis Monte Carlo.

Energy model (arbitrary units, kT = ``noise``):

    bonds      0.5 k_b (r - r0)^2,  r0 = 1.1 (r_cov_i + r_cov_j)
    angles     0.5 k_a (theta - 109.5 deg)^2
    torsions   k_t (1 + cos 3 phi) + 0.5 k_c (1 - sin phi)  on heavy-atom backbone quadruples
    repulsion  k_r (sigma - r)^2 for r < sigma, pairs more than three bonds apart

A nonzero k_c favors gauche+ over gauche-, so the ensemble is chiral like peptide benchmarks.
With k_c = 0 every conformer and its mirror image are equally likely.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, GeneratorError
from .geometry import CGMapping, Conformation, random_orthogonal
from .graphs import COVALENT_RADIUS, expand_multihop, graph_from_pairs

VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2}
THETA0 = np.deg2rad(109.5)

K_BOND = 300.0
K_ANGLE = 60.0
K_TORSION = 1.0
K_REPULSE = 50.0
SIGMA_REPULSE = 2.2
MIN_START_HEAVY = 2.6
MIN_START_ANY = 1.5


@dataclass
class Trajectory:
    elements: tuple
    bonds: np.ndarray     # (E, 2) generating topology, i < j
    frames: np.ndarray    # (T, n, 3)

    def __post_init__(self):
        self.elements = tuple(self.elements)
        self.frames = np.asarray(self.frames, dtype=np.float64).reshape(-1, len(self.elements), 3)
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)

    @property
    def n(self):
        return len(self.elements)

    def __len__(self):
        return self.frames.shape[0]

    def conformations(self):
        return [Conformation(self.elements, f) for f in self.frames]

    def heavy_backbone(self):
        """Heavy atoms in chain order (indices)."""
        return [i for i, e in enumerate(self.elements) if e != "H"]

    def subset(self, idx):
        return Trajectory(self.elements, self.bonds, self.frames[np.asarray(idx)])


@dataclass(frozen=True)
class ChainSpec:
    pattern: str = "CCCCCCCCCC"
    frames: int = 2000
    noise: float = 0.5
    seed: int = 0
    chiral_bias: float = 1.0
    tumble: bool = True          # give every frame an independent random orientation

    def __post_init__(self):
        if len(self.pattern) < 4:
            raise ConfigError("chain length must be at least 4")
        unknown = set(self.pattern) - set(VALENCE)
        if unknown:
            raise ConfigError(f"unsupported backbone elements {sorted(unknown)}")


PRESETS = {
    "butane": ChainSpec(pattern="CCCC"),
    "decane": ChainSpec(pattern="CCCCCCCCCC"),
}


# ---------------------------------------------------------------- topology

def chain_topology(pattern):
    """Elements (heavy backbone first, then hydrogens) and bonds of a saturated chain."""
    L = len(pattern)
    elements = list(pattern)
    bonds = [(i, i + 1) for i in range(L - 1)]
    parents = []
    for i, e in enumerate(pattern):
        heavy_deg = (i > 0) + (i < L - 1)
        for _ in range(VALENCE[e] - heavy_deg):
            bonds.append((i, len(elements)))
            parents.append(i)
            elements.append("H")
    return tuple(elements), np.array(bonds, dtype=np.int64), np.array(parents, dtype=np.int64)


def _nerf(a, b, c, r, theta, phi):
    bc = c - b
    bc /= np.linalg.norm(bc)
    nv = np.cross(b - a, bc)
    nv /= np.linalg.norm(nv)
    m = np.cross(nv, bc)
    d2 = np.array([-r * np.cos(theta), r * np.sin(theta) * np.cos(phi), r * np.sin(theta) * np.sin(phi)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * nv


def bond_length(e1, e2):
    return 1.1 * (COVALENT_RADIUS[e1] + COVALENT_RADIUS[e2])


def build_chain(pattern, torsions=None):
    """Ideal geometry from internal coordinates; ``torsions`` (degrees) for backbone atoms 3..L-1."""
    L = len(pattern)
    elements, bonds, parents = chain_topology(pattern)
    if torsions is None:
        torsions = [180.0] * (L - 3)
    x = np.zeros((len(elements), 3))
    x[1] = [bond_length(pattern[0], pattern[1]), 0.0, 0.0]
    r12 = bond_length(pattern[1], pattern[2])
    x[2] = x[1] + r12 * np.array([-np.cos(THETA0), np.sin(THETA0), 0.0])
    for k in range(3, L):
        x[k] = _nerf(x[k - 3], x[k - 2], x[k - 1], bond_length(pattern[k - 1], pattern[k]),
                     THETA0, np.deg2rad(torsions[k - 3]))
    h = L
    for i in range(L):
        n_h = int(np.sum(parents == i))
        if n_h == 0:
            continue
        if i == 0:
            a, b = 2, 1
            dihedrals = [180.0, 60.0, 300.0]
        elif i == L - 1:
            a, b = L - 3, L - 2
            dihedrals = [180.0, 60.0, 300.0]
        else:
            a, b = i + 1, i - 1
            dihedrals = [120.0, 240.0] if n_h == 2 else [180.0]
        for phi in dihedrals[:n_h]:
            x[h] = _nerf(x[a], x[b], x[i], bond_length(pattern[i], "H"), THETA0, np.deg2rad(phi))
            h += 1
    return elements, bonds, x


# ---------------------------------------------------------------- energy

def torsion_energy(phi, chiral_bias=0.0):
    return K_TORSION * (1.0 + np.cos(3.0 * phi)) + 0.5 * chiral_bias * (1.0 - np.sin(phi))


class ChainEnergy:
    """Vectorized energy over a stack of conformations (C, n, 3)."""

    def __init__(self, elements, bonds, backbone_len, chiral_bias=0.0):
        n = len(elements)
        self.chiral_bias = chiral_bias
        self.bonds = np.asarray(bonds)
        self.r0 = np.array([bond_length(elements[i], elements[j]) for i, j in self.bonds])
        nbr = [[] for _ in range(n)]
        for i, j in self.bonds:
            nbr[i].append(j)
            nbr[j].append(i)
        angles = []
        for c in range(n):
            for p in range(len(nbr[c])):
                for q in range(p + 1, len(nbr[c])):
                    angles.append((nbr[c][p], c, nbr[c][q]))
        self.angles = np.array(angles, dtype=np.int64).reshape(-1, 3)
        self.torsions = np.array([(k, k + 1, k + 2, k + 3) for k in range(backbone_len - 3)],
                                 dtype=np.int64).reshape(-1, 4)
        near = expand_multihop(graph_from_pairs(n, [tuple(b) for b in self.bonds]), hops=3)
        near = {tuple(p) for p in near.tolist()}
        self.far = np.array([(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in near],
                            dtype=np.int64).reshape(-1, 2)
        self._local = [self._touching(k) for k in range(n)]

    def _touching(self, k):
        masks = [(t == k).any(axis=1) for t in (self.bonds, self.angles, self.torsions, self.far)]
        return (self.bonds[masks[0]], self.r0[masks[0]], self.angles[masks[1]],
                self.torsions[masks[2]], self.far[masks[3]])

    def __call__(self, x):
        return _energy(np.asarray(x), self.bonds, self.r0, self.angles, self.torsions, self.far,
                       self.chiral_bias)

    def local(self, x, k):
        """Terms involving atom ``k``; their difference equals the total energy difference of a move of k."""
        return _energy(np.asarray(x), *self._local[k], self.chiral_bias)


def _energy(x, bonds, r0, angles, torsions, far, chiral_bias=0.0):
    e = np.zeros(x.shape[0])
    if bonds.size:
        r = np.linalg.norm(x[:, bonds[:, 1]] - x[:, bonds[:, 0]], axis=-1)
        e += 0.5 * K_BOND * ((r - r0) ** 2).sum(-1)
    if angles.size:
        u = x[:, angles[:, 0]] - x[:, angles[:, 1]]
        v = x[:, angles[:, 2]] - x[:, angles[:, 1]]
        cos = (u * v).sum(-1) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))
        theta = np.arccos(np.clip(cos, -1.0, 1.0))
        e += 0.5 * K_ANGLE * ((theta - THETA0) ** 2).sum(-1)
    if torsions.size:
        phi = dihedral_batch(*(x[:, torsions[:, k]] for k in range(4)))
        e += torsion_energy(phi, chiral_bias).sum(-1)
    if far.size:
        d = np.linalg.norm(x[:, far[:, 0]] - x[:, far[:, 1]], axis=-1)
        e += K_REPULSE * (np.clip(SIGMA_REPULSE - d, 0.0, None) ** 2).sum(-1)
    return e


def dihedral_batch(p0, p1, p2, p3):
    b0 = p0 - p1
    b1 = p2 - p1
    b2 = p3 - p2
    b1n = b1 / np.linalg.norm(b1, axis=-1, keepdims=True)
    v = b0 - (b0 * b1n).sum(-1, keepdims=True) * b1n
    w = b2 - (b2 * b1n).sum(-1, keepdims=True) * b1n
    xx = (v * w).sum(-1)
    yy = (np.cross(b1n, v) * w).sum(-1)
    return np.arctan2(yy, xx)


def minimize_chain(energy, x0):
    n = x0.shape[0]
    res = minimize(lambda f: energy(f.reshape(1, n, 3))[0], x0.ravel(), method="L-BFGS-B",
                   options={"maxiter": 5000, "gtol": 1e-9})
    return res.x.reshape(n, 3)


# ---------------------------------------------------------------- sampling

def _clash_free_start(pattern, energy, states, probs, rng, attempts=200):
    """Build a chain from random torsion states, redrawing combinations whose distant atoms overlap."""
    far = energy.far
    L = len(pattern)
    heavy = (far < L).all(axis=1)
    for _ in range(attempts):
        tors = rng.choice(states, size=L - 3, p=probs)
        _, _, x = build_chain(pattern, tors)
        if far.size == 0:
            return x
        d = np.linalg.norm(x[far[:, 0]] - x[far[:, 1]], axis=-1)
        if d.min() >= MIN_START_ANY and (not heavy.any() or d[heavy].min() >= MIN_START_HEAVY):
            return x
    raise GeneratorError("could not draw a clash-free starting conformation")


def gen_toy_trajectory(spec: ChainSpec = ChainSpec(), n_chains=None, burn_in=30, stride=10) -> Trajectory:
    """Metropolis samples of a saturated chain; frames are 10 sweeps apart by default."""
    rng = np.random.default_rng(spec.seed)
    L = len(spec.pattern)
    elements, bonds, x_ideal = build_chain(spec.pattern)
    energy = ChainEnergy(elements, bonds, L, spec.chiral_bias)
    x_min = minimize_chain(energy, x_ideal)
    x_min -= x_min.mean(0)
    if spec.noise <= 0:
        return Trajectory(elements, bonds, np.repeat(x_min[None], spec.frames, axis=0))

    if n_chains is None:
        n_chains = max(1, min(100, spec.frames))
    per_chain = int(np.ceil(spec.frames / n_chains))
    # barrier crossings are rare on this run length, so start chains from Boltzmann-weighted torsion states
    states = np.array([180.0, 60.0, -60.0])
    weights = np.exp(-torsion_energy(np.deg2rad(states), spec.chiral_bias) / spec.noise)
    starts = []
    for _ in range(n_chains):
        xc = _clash_free_start(spec.pattern, energy, states, weights / weights.sum(), rng)
        xc = xc - xc.mean(0)
        starts.append(xc @ random_orthogonal(rng, reflection=False).T)
    x = np.stack(starts)
    n = x.shape[1]
    step = 0.3 * np.sqrt(spec.noise / K_BOND)
    frames = []
    accepted = proposed = 0
    total_sweeps = burn_in + per_chain * stride
    for sweep in range(total_sweeps):
        sweep_acc = 0
        for k in range(n):
            trial = x.copy()
            trial[:, k] += rng.normal(0.0, step, size=(n_chains, 3))
            delta = energy.local(trial, k) - energy.local(x, k)
            accept = rng.random(n_chains) < np.exp(-np.clip(delta, 0.0, None) / spec.noise)
            x[accept] = trial[accept]
            sweep_acc += int(accept.sum())
        rate = sweep_acc / (n * n_chains)
        if sweep < burn_in:
            step *= 1.15 if rate > 0.45 else 0.87 if rate < 0.35 else 1.0
        else:
            accepted += sweep_acc
            proposed += n * n_chains
            if (sweep - burn_in + 1) % stride == 0:
                frames.append(x - x.mean(axis=1, keepdims=True))
    if proposed and accepted / proposed < 0.01:
        raise GeneratorError(f"Metropolis acceptance {accepted / proposed:.4f} below 1%")
    out = np.stack(frames, axis=1).reshape(-1, n, 3)[: spec.frames]
    if spec.tumble:
        # single-atom moves barely rotate a chain, unlike a molecule tumbling in solution
        rots = np.stack([random_orthogonal(rng, reflection=False) for _ in range(len(out))])
        out = np.einsum("tij,tnj->tni", rots, out)
    return Trajectory(elements, bonds, out)


def segment_mapping(traj: Trajectory, N, weights="uniform") -> CGMapping:
    """Contiguous heavy-atom segments, hydrogens joining their parent's bead."""
    heavy = traj.heavy_backbone()
    if N > len(heavy) or N < 1:
        raise ConfigError(f"cannot split {len(heavy)} heavy atoms into {N} segments")
    seg = np.array_split(np.arange(len(heavy)), N)
    assign = np.zeros(traj.n, dtype=np.int64)
    for b, s in enumerate(seg):
        assign[np.array(heavy)[s]] = b
    parent = {}
    for i, j in traj.bonds:
        if traj.elements[j] == "H":
            parent[j] = i
        elif traj.elements[i] == "H":
            parent[i] = j
    for h, p in parent.items():
        assign[h] = assign[p]
    return CGMapping.from_assignment(assign, weights, traj.elements, N)


def consensus_bonds(elements, frames, min_fraction=0.5):
    """Bonds perceived in more than ``min_fraction`` of the frames, as a sorted (E, 2) array."""
    from .evaluation import bond_masks
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    votes = sum(bond_masks(elements, f).astype(np.int64) for f in frames)
    return np.argwhere(votes > min_fraction * len(frames))


def trajectory_from_frames(elements, frames):
    """Wrap frames read from disk, taking the topology from bond perception."""
    return Trajectory(elements, consensus_bonds(elements, frames), frames)


def two_cluster_frames(seed, frames=100, sizes=(6, 6), separation=10.0, jitter=0.05):
    """Rigid clusters that tumble independently around centers ``separation`` apart.

    Returns (frames (T, n, 3), ground-truth cluster label per atom); atom order is shuffled.
    """
    from .geometry import random_orthogonal
    rng = np.random.default_rng(seed)
    shapes = [rng.normal(0.0, 1.0, size=(k, 3)) for k in sizes]
    labels = np.concatenate([np.full(k, i) for i, k in enumerate(sizes)])
    perm = rng.permutation(labels.size)
    out = np.empty((frames, labels.size, 3))
    for t in range(frames):
        parts = [s @ random_orthogonal(rng, reflection=False).T + np.array([separation * i, 0.0, 0.0])
                 + rng.normal(0.0, 0.5, size=3) for i, s in enumerate(shapes)]
        out[t] = (np.concatenate(parts) + rng.normal(0.0, jitter, size=(labels.size, 3)))[perm]
    return out, labels[perm]
