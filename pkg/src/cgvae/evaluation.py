"""Reconstruction and sample-quality metrics, dihedral angles and run-level reports."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateGeometryError, DomainError, NoValidSamplesError, ShapeError
from .geometry import project_batch
from .graphs import BOND_SCALE, Graph, covalent_radii

METRICS = ("rmsd_recon", "lambda_ratio", "rmsd_gen", "valid_graph_ratio")


def rmsd(a, b):
    """Root mean squared atom displacement, without any alignment."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] != 3:
        raise ShapeError(f"cannot compare {a.shape} with {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum(-1).mean()))


def graph_edit_ratio(gen: Graph, ref: Graph):
    """|E_gen symmetric-difference E_ref| / |E_ref| under the fixed node correspondence."""
    if gen.num_nodes != ref.num_nodes:
        raise ShapeError(f"graphs have {gen.num_nodes} and {ref.num_nodes} nodes")
    e_ref = ref.edge_set()
    if not e_ref:
        raise DomainError("reference graph has no edges")
    return len(gen.edge_set() ^ e_ref) / len(e_ref)


def bond_masks(elements, coords, scale=BOND_SCALE):
    """Upper-triangular bond indicator (..., n, n) for a stack of conformations."""
    coords = np.asarray(coords, dtype=np.float64)
    r = covalent_radii(elements)
    diff = coords[..., :, None, :] - coords[..., None, :, :]
    d = np.sqrt((diff * diff).sum(-1))
    mask = d < scale * (r[:, None] + r[None, :])
    return np.triu(mask, k=1)


def edit_ratios(elements, samples, reference, scale=BOND_SCALE):
    """Vectorized lambda of every sample in (S, n, 3) against one reference frame."""
    ref = bond_masks(elements, reference, scale)
    n_ref = int(ref.sum())
    if n_ref == 0:
        raise DomainError("reference graph has no edges")
    gen = bond_masks(elements, samples, scale)
    return (gen ^ ref).sum(axis=(-1, -2)) / n_ref


def rmsd_gen(samples, reference):
    """sqrt of the mean over samples and atoms of the squared deviation from the reference frame."""
    samples = np.asarray(samples, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.shape[0] == 0:
        raise NoValidSamplesError("no samples with a valid graph")
    if samples.shape[1:] != reference.shape:
        raise ShapeError(f"samples {samples.shape} do not match reference {reference.shape}")
    return float(np.sqrt(((samples - reference) ** 2).sum(-1).mean()))


def dihedral(p1, p2, p3, p4, tol=1e-10):
    """Signed torsion angle in (-pi, pi]."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b0, b1, b2 = p1 - p2, p3 - p2, p4 - p3
    nb1 = np.linalg.norm(b1)
    if nb1 < tol:
        raise DegenerateGeometryError("coincident central atoms")
    u = b1 / nb1
    # components of the outer bonds perpendicular to the central bond
    v = b0 - (b0 @ u) * u
    w = b2 - (b2 @ u) * u
    if np.linalg.norm(v) < tol * nb1 or np.linalg.norm(w) < tol * nb1:
        raise DegenerateGeometryError("three consecutive points are collinear")
    angle = float(np.arctan2(np.cross(u, v) @ w, v @ w))
    return np.pi if angle == -np.pi else angle


def dihedral_series(frames, quad):
    frames = np.asarray(frames, dtype=np.float64)
    return np.array([dihedral(*(f[i] for i in quad)) for f in frames])


# ---------------------------------------------------------------- reports

@dataclass(frozen=True)
class Stat:
    mean: float
    stderr: float


@dataclass(frozen=True)
class MetricReport:
    rmsd_recon: Stat
    lambda_ratio: Stat
    rmsd_gen: Stat
    valid_graph_ratio: Stat

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


@dataclass(frozen=True)
class RunReport:
    all_atom: MetricReport
    heavy_atom: MetricReport
    folds: int
    samples_per_frame: int

    def variants(self):
        return {"all_atom": self.all_atom, "heavy_atom": self.heavy_atom}

    def to_text(self):
        lines = [f"folds: {self.folds}", f"samples_per_frame: {self.samples_per_frame}"]
        for variant, rep in self.variants().items():
            for name, stat in rep.items():
                lines.append(f"{variant}.{name}: {stat.mean:.6g} {stat.stderr:.6g}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "metric", "mean", "stderr"])
            for variant, rep in self.variants().items():
                for name, stat in rep.items():
                    w.writerow([variant, name, f"{stat.mean:.10g}", f"{stat.stderr:.10g}"])


def read_report_csv(path):
    """{variant: {metric: (mean, stderr)}} from a file written by RunReport.write_csv."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["variant"], {})[row["metric"]] = (float(row["mean"]), float(row["stderr"]))
    return out


def _stat(values):
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return Stat(float("nan"), float("nan"))
    err = finite.std(ddof=1) / np.sqrt(finite.size) if finite.size > 1 else 0.0
    return Stat(float(finite.mean()), float(err))


def _frame_metrics(elements, x, recon, samples, stochastic):
    """Per-frame rmsd, per-sample lambdas and the frame's RMSD_gen over valid samples."""
    lam = edit_ratios(elements, samples, x)
    valid = samples[lam == 0]
    if not stochastic:
        gen = 0.0
    else:
        try:
            gen = rmsd_gen(valid, x)
        except NoValidSamplesError:
            gen = float("nan")
    return rmsd(recon, x), lam, gen


def _variant_report(elements, frames, recon, samples, stochastic, folds, threads):
    T = len(frames)
    args = [(elements, frames[t], recon[t], samples[t], stochastic) for t in range(T)]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_frame = list(pool.map(lambda a: _frame_metrics(*a), args))
    else:
        per_frame = [_frame_metrics(*a) for a in args]
    chunks = np.array_split(np.arange(T), min(folds, T))
    cols = {m: [] for m in METRICS}
    for chunk in chunks:
        lams = np.concatenate([per_frame[t][1] for t in chunk])
        gens = np.array([per_frame[t][2] for t in chunk])
        cols["rmsd_recon"].append(np.mean([per_frame[t][0] for t in chunk]))
        cols["lambda_ratio"].append(lams.mean())
        cols["valid_graph_ratio"].append(np.mean(lams == 0))
        cols["rmsd_gen"].append(np.nanmean(gens) if np.isfinite(gens).any() else np.nan)
    return MetricReport(**{m: _stat(v) for m, v in cols.items()})


def evaluate_run(model, frames, elements, count=32, seed=0, folds=5, threads=1) -> RunReport:
    """All four metrics for all atoms and for heavy atoms only.

    ``model`` needs ``mapping``, ``stochastic``, ``reconstruct(frames)`` and ``sample(X, count, seed)``.
    Deterministic models report RMSD_gen = 0: their repeated samples carry no diversity.
    """
    frames = np.asarray(frames, dtype=np.float64)
    elements = tuple(elements)
    if frames.ndim != 3 or frames.shape[1] != len(elements):
        raise ShapeError("frames must be (T, n, 3) matching the element list")
    X = project_batch(frames, model.mapping)
    recon = model.reconstruct(frames)
    samples = model.sample(X, count=count, seed=seed)
    stochastic = bool(getattr(model, "stochastic", True))
    heavy = np.array([e != "H" for e in elements])
    reports = {}
    for name, sel in (("all_atom", np.ones_like(heavy)), ("heavy_atom", heavy)):
        el = tuple(e for e, keep in zip(elements, sel) if keep)
        reports[name] = _variant_report(el, frames[:, sel], recon[:, sel], samples[:, :, sel],
                                        stochastic, folds, threads)
    return RunReport(reports["all_atom"], reports["heavy_atom"], min(folds, len(frames)), count)


class CGVAEBackmapper:
    """Evaluation adapter around a trained CGVAE."""

    stochastic = True

    def __init__(self, model, batch_size=64):
        self.model = model
        self.mapping = model.mapping
        self.batch_size = batch_size

    def reconstruct(self, frames):
        from .training import reconstruct
        return reconstruct(self.model, frames, self.batch_size)

    def sample(self, X, count=32, seed=0):
        from .training import sample
        return sample(self.model, X, count, seed, self.batch_size)
