"""Coarse-graining algebra: assignment maps, projection M, lift M+ and isometries."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidMappingError, InvalidTransformError, ParseError, ShapeError

ELEMENTS = ("H", "C", "N", "O", "S")
ATOMIC_MASS = {"H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "S": 32.06}


@dataclass(frozen=True)
class Conformation:
    elements: tuple
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "elements", tuple(self.elements))
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] < 1:
            raise ShapeError(f"coords must be n x 3 with n >= 1, got {coords.shape}")
        if len(self.elements) != coords.shape[0]:
            raise ShapeError("one element label per atom required")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite coordinates")

    @property
    def n(self):
        return self.coords.shape[0]


@dataclass(frozen=True)
class CGConformation:
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] < 1:
            raise ShapeError(f"CG coords must be N x 3, got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite coordinates")

    @property
    def N(self):
        return self.coords.shape[0]


@dataclass(frozen=True)
class CGMapping:
    """Assignment of n atoms to N beads with per-atom projection weights."""

    assign: np.ndarray
    weights: np.ndarray
    n_beads: int = field(default=-1)

    def __post_init__(self):
        assign = np.asarray(self.assign, dtype=np.int64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n_beads = int(self.n_beads) if self.n_beads >= 0 else int(assign.max()) + 1 if assign.size else 0
        object.__setattr__(self, "assign", assign)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "n_beads", n_beads)
        if assign.size == 0:
            raise InvalidMappingError("mapping has no atoms")
        if weights.shape != assign.shape:
            raise InvalidMappingError("one weight per atom required")
        if assign.min() < 0 or assign.max() >= n_beads:
            raise InvalidMappingError("bead index out of range")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidMappingError("weights must be finite and nonnegative")
        counts = np.bincount(assign, minlength=n_beads)
        if np.any(counts == 0):
            raise InvalidMappingError(f"empty beads: {np.flatnonzero(counts == 0).tolist()}")
        totals = np.bincount(assign, weights=weights, minlength=n_beads)
        if np.any(totals <= 0):
            raise InvalidMappingError(f"beads with zero total weight: {np.flatnonzero(totals <= 0).tolist()}")

    @property
    def n(self):
        return self.assign.size

    @property
    def N(self):
        return self.n_beads

    @classmethod
    def from_assignment(cls, assign, weights="uniform", elements=None, n_beads=-1):
        assign = np.asarray(assign, dtype=np.int64)
        if isinstance(weights, str):
            weights = atom_weights(weights, elements, len(assign))
        return cls(assign, weights, n_beads)

    def members(self, bead):
        """Atoms of a bead in ascending index order."""
        return np.flatnonzero(self.assign == bead)

    def bead_sizes(self):
        return np.bincount(self.assign, minlength=self.N)

    def normalized_weights(self):
        """Per-atom w_i / sum_{j in C_m(i)} w_j, i.e. the nonzero entries of M."""
        totals = np.bincount(self.assign, weights=self.weights, minlength=self.N)
        return self.weights / totals[self.assign]

    def channel_index(self):
        """Index(i, C_m(i)) for every atom, with C_I ordered by atom index."""
        idx = np.zeros(self.n, dtype=np.int64)
        for bead in range(self.N):
            members = self.members(bead)
            idx[members] = np.arange(members.size)
        return idx


def atom_weights(mode, elements=None, n=None):
    if mode == "uniform":
        if n is None:
            n = len(elements)
        return np.ones(n)
    if mode == "mass":
        if elements is None:
            raise InvalidMappingError("mass weights need element labels")
        return np.array([ATOMIC_MASS[e] for e in elements])
    raise InvalidMappingError(f"unknown weight mode {mode!r}")


def index_in_bead(atom, members):
    """Position of ``atom`` inside the ordered member tuple of its bead."""
    members = list(members)
    return members.index(atom)


def projection_matrix(mapping: CGMapping) -> np.ndarray:
    M = np.zeros((mapping.N, mapping.n))
    M[mapping.assign, np.arange(mapping.n)] = mapping.normalized_weights()
    return M


def lift_matrix(mapping: CGMapping) -> np.ndarray:
    P = np.zeros((mapping.n, mapping.N))
    P[np.arange(mapping.n), mapping.assign] = 1.0
    return P


def _coords(x):
    if isinstance(x, (Conformation, CGConformation)):
        return x.coords
    return np.asarray(x, dtype=np.float64)


def project(x, mapping: CGMapping) -> CGConformation:
    xc = _coords(x)
    if xc.shape != (mapping.n, 3):
        raise ShapeError(f"expected {mapping.n} x 3 coordinates, got {xc.shape}")
    X = np.zeros((mapping.N, 3))
    np.add.at(X, mapping.assign, mapping.normalized_weights()[:, None] * xc)
    return CGConformation(X)


def project_batch(x, mapping: CGMapping) -> np.ndarray:
    """Project a stack of frames (B, n, 3) -> (B, N, 3)."""
    x = np.asarray(x, dtype=np.float64)
    return np.einsum("Ii,bik->bIk", projection_matrix(mapping), x)


def lift(X, mapping: CGMapping) -> np.ndarray:
    Xc = _coords(X)
    if Xc.shape != (mapping.N, 3):
        raise ShapeError(f"expected {mapping.N} x 3 CG coordinates, got {Xc.shape}")
    return Xc[mapping.assign].copy()


def recenter_residual(dx, mapping: CGMapping) -> np.ndarray:
    """dx - M+ M dx: removes the per-bead weighted mean of a displacement field."""
    dx = np.asarray(dx, dtype=np.float64)
    if dx.shape != (mapping.n, 3):
        raise ShapeError(f"expected {mapping.n} x 3 displacements, got {dx.shape}")
    return dx - lift(project(dx, mapping), mapping)


def check_orthogonal(Q, tol=1e-10):
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (3, 3) or np.abs(Q.T @ Q - np.eye(3)).max() > tol:
        raise InvalidTransformError("Q must be a 3x3 orthogonal matrix")
    return Q


def apply_isometry(coords, Q, g):
    Q = check_orthogonal(Q)
    g = np.asarray(g, dtype=np.float64).reshape(3)
    c = _coords(coords)
    return c @ Q.T + g


def random_orthogonal(rng, reflection=None):
    """Haar-random orthogonal matrix; ``reflection`` forces det = -1 (True) or +1 (False)."""
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))
    if reflection is not None:
        want = -1.0 if reflection else 1.0
        if np.sign(np.linalg.det(Q)) != want:
            Q[:, 0] = -Q[:, 0]
    return Q


def random_mapping(rng, n, N, weights="random"):
    """Random surjective assignment of n atoms onto N beads."""
    if N > n:
        raise InvalidMappingError("need at least one atom per bead")
    assign = np.concatenate([np.arange(N), rng.integers(0, N, size=n - N)])
    rng.shuffle(assign)
    if weights == "random":
        w = rng.uniform(0.1, 2.0, size=n)
    else:
        w = np.ones(n)
    return CGMapping(assign, w, N)


# ---------------------------------------------------------------- mapping files

def write_mapping(path, mapping: CGMapping, comment=None):
    lines = [f"# cg mapping n={mapping.n} N={mapping.N}"]
    if comment:
        lines.append(f"# {comment}")
    lines.append("# atom_index bead_index weight")
    for i, (b, w) in enumerate(zip(mapping.assign, mapping.weights)):
        lines.append(f"{i} {b} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mapping(path) -> CGMapping:
    rows = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'atom_index bead_index weight', got {raw!r}", lineno)
        try:
            atom, bead, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if atom in rows:
            raise ParseError(f"atom {atom} listed twice", lineno)
        rows[atom] = (bead, w)
    if not rows:
        raise InvalidMappingError("empty mapping file")
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise InvalidMappingError("atom indices must cover 0..n-1")
    assign = np.array([rows[i][0] for i in range(n)])
    weights = np.array([rows[i][1] for i in range(n)])
    return CGMapping(assign, weights)
