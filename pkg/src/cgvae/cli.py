"""Command-line entry point: ``cgvae <subcommand> [options]``.

Configuration problems exit with status 2, any other failure with status 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, validate
from .errors import CGVAEError, ConfigError

log = logging.getLogger("cgvae")

# flag name -> (config section, key); flags left unset keep the config value
OVERRIDES = {
    "pattern": ("data", "pattern"), "frames": ("data", "frames"), "noise": ("data", "noise"),
    "chiral_bias": ("data", "chiral_bias"), "data_seed": ("data", "seed"),
    "holdout": ("data", "test_frames"),
    "mode": ("mapping", "mode"), "N": ("mapping", "N"), "mapping_epochs": ("mapping", "epochs"),
    "weights": ("mapping", "weights"),
    "epochs": ("train", "epochs"), "lr": ("train", "learning_rate"), "batch_size": ("train", "batch_size"),
    "seed": ("train", "seed"),
    "samples": ("evaluate", "samples"), "folds": ("evaluate", "folds"), "threads": ("evaluate", "threads"),
}


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {}
    for flag, (section, key) in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates.setdefault(section, {})[key] = value
    for section, kv in updates.items():
        setattr(cfg, section, replace(getattr(cfg, section), **kv))
    if getattr(args, "seed", None) is not None:
        cfg.model = replace(cfg.model, seed=args.seed)
    validate(cfg)
    return cfg


def _load_traj(path):
    from .datasets import trajectory_from_frames
    from .xyzio import read_xyz
    elements, frames = read_xyz(path)
    if len(frames) == 0:
        raise ConfigError(f"{path} holds no frames")
    return trajectory_from_frames(elements, frames)


def _holdout_split(traj, holdout, seed):
    """(train frames, held-out frames); a zero hold-out trains and evaluates on everything."""
    from .pipeline import split_train_test
    if holdout == 0:
        return traj.frames, traj.frames
    return split_train_test(traj, holdout, seed)


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    from .datasets import gen_toy_trajectory
    from .xyzio import write_xyz
    cfg = _run_config(args)
    traj = gen_toy_trajectory(cfg.chain_spec())
    write_xyz(args.out, traj.elements, traj.frames)
    print(f"wrote {len(traj)} frames of {traj.n} atoms to {args.out}")


def cmd_learn_mapping(args):
    from .geometry import write_mapping
    from .pipeline import learn_mapping
    cfg = _run_config(args)
    traj = _load_traj(args.data)
    train_x, _ = _holdout_split(traj, cfg.data.test_frames, cfg.data.seed)
    mapping = learn_mapping(traj, train_x, cfg.mapping.N, cfg.mapping.mode, cfg.autograin_config())
    write_mapping(args.out, mapping, comment=f"mode={cfg.mapping.mode}")
    sizes = np.bincount(mapping.assign, minlength=mapping.N).tolist()
    print(f"wrote mapping with bead sizes {sizes} to {args.out}")


def _pairs(traj, hops):
    from .pipeline import multihop_pairs
    return multihop_pairs(traj, hops)


def cmd_train(args):
    from .geometry import read_mapping
    from .model import CGVAE
    from .training import save_checkpoint, train
    cfg = _run_config(args)
    traj = _load_traj(args.data)
    mapping = read_mapping(args.mapping)
    if mapping.n != traj.n:
        raise ConfigError(f"mapping covers {mapping.n} atoms, trajectory has {traj.n}")
    train_x, _ = _holdout_split(traj, cfg.data.test_frames, cfg.data.seed)
    tcfg = cfg.train_config()
    model = CGVAE(tcfg.model, traj.elements, mapping, _pairs(traj, args.hops))
    result = train(model, train_x, tcfg, log_path=args.log)
    save_checkpoint(args.out, model, tcfg)
    if result.history:
        last = result.history[-1]
        print(f"epoch {last['epoch']} msd {last['msd']:.4f} graph {last['graph']:.4f} kl {last['kl']:.4f}")
    print(f"wrote checkpoint {args.out}")


def cmd_reconstruct(args):
    from .training import load_checkpoint, reconstruct
    from .xyzio import read_xyz, write_xyz
    model, _ = load_checkpoint(args.checkpoint)
    elements, frames = read_xyz(args.data)
    _check_elements(model, elements)
    write_xyz(args.out, elements, reconstruct(model, frames))
    print(f"wrote {len(frames)} reconstructed frames to {args.out}")


def cmd_sample(args):
    from .geometry import project_batch
    from .training import load_checkpoint, sample
    from .xyzio import read_xyz, write_xyz
    model, _ = load_checkpoint(args.checkpoint)
    elements, frames = read_xyz(args.data)
    _check_elements(model, elements)
    out = sample(model, project_batch(frames, model.mapping), args.count, args.seed)
    comments = [f"frame={t} sample={s}" for t in range(out.shape[0]) for s in range(out.shape[1])]
    write_xyz(args.out, elements, out.reshape(-1, len(elements), 3), comments)
    print(f"wrote {out.shape[0] * out.shape[1]} samples to {args.out}")


def _check_elements(model, elements):
    if tuple(elements) != tuple(model.elements):
        raise ConfigError("trajectory elements do not match the checkpoint")


def cmd_evaluate(args):
    from .evaluation import CGVAEBackmapper, evaluate_run
    from .training import load_checkpoint
    cfg = _run_config(args)
    model, _ = load_checkpoint(args.checkpoint)
    traj = _load_traj(args.data)
    _check_elements(model, traj.elements)
    _, test_x = _holdout_split(traj, cfg.data.test_frames, cfg.data.seed)
    ev = cfg.evaluate
    report = evaluate_run(CGVAEBackmapper(model), test_x, traj.elements, count=ev.samples,
                          seed=ev.seed, folds=ev.folds, threads=ev.threads)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    if args.csv:
        report.write_csv(args.csv)
    sys.stdout.write(text)


def cmd_gradcheck(args):
    from .training import run_gradcheck
    ok, errors = run_gradcheck(args.seed, args.tol)
    for name, err in sorted(errors.items()):
        print(f"{name}: {err:.3e}")
    print(f"worst {max(errors.values()):.3e} tol {args.tol:g} -> {'ok' if ok else 'FAILED'}")
    return 0 if ok else 1


def cmd_plot(args):
    from .plotting import bar_chart_svg, histogram_svg, line_plot_svg
    if args.kind == "dihedral":
        from .datasets import dihedral_batch
        from .xyzio import read_xyz
        if len(args.atoms) != 4:
            raise ConfigError("--atoms needs four indices")
        _, frames = read_xyz(args.inputs[0])
        phi = dihedral_batch(*(frames[:, i] for i in args.atoms))
        svg = histogram_svg(phi, title=args.title or "dihedral", xlabel="angle (rad)")
    elif args.kind == "metrics":
        from .evaluation import METRICS, read_report_csv
        reports = {Path(p).stem: read_report_csv(p) for p in args.inputs}
        series = {name: [r[args.variant][m][0] for m in METRICS] for name, r in reports.items()}
        errors = {name: [r[args.variant][m][1] for m in METRICS] for name, r in reports.items()}
        svg = bar_chart_svg(list(METRICS), series, title=args.title or args.variant, errors=errors)
    else:
        from .training import loss_log_rows
        rows = loss_log_rows(args.inputs[0])
        epochs = [int(r["epoch"]) for r in rows]
        ys = {k: [float(r[k]) for r in rows] for k in ("L_MSD", "L_graph", "KL")}
        svg = line_plot_svg(epochs, ys, title=args.title or "training loss", xlabel="epoch", log_y=True)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="cgvae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="run configuration file")
        return sp

    g = add("gen-data", cmd_gen_data, "sample a toy chain trajectory to XYZ")
    g.add_argument("--out", required=True)
    g.add_argument("--pattern")
    g.add_argument("--frames", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--chiral-bias", dest="chiral_bias", type=float)
    g.add_argument("--seed", dest="data_seed", type=int)
    g.set_defaults(holdout=0)     # the hold-out size only matters downstream

    m = add("learn-mapping", cmd_learn_mapping, "fit a bead assignment and write a mapping file")
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--N", type=int)
    m.add_argument("--mode", choices=("autograin", "segments"))
    m.add_argument("--epochs", dest="mapping_epochs", type=int)
    m.add_argument("--holdout", type=int)

    t = add("train", cmd_train, "train a model and write a checkpoint and loss log")
    t.add_argument("--data", required=True)
    t.add_argument("--mapping", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--holdout", type=int)
    t.add_argument("--hops", type=int, default=2)

    r = add("reconstruct", cmd_reconstruct, "reconstruct frames through the posterior mean", config=False)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)

    s = add("sample", cmd_sample, "draw all-atom samples for the CG projection of each frame", config=False)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)

    e = add("evaluate", cmd_evaluate, "score a checkpoint on held-out frames")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--csv")
    e.add_argument("--holdout", type=int)
    e.add_argument("--samples", type=int)
    e.add_argument("--folds", type=int)
    e.add_argument("--threads", type=int)

    c = add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter gradient", config=False)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)

    q = add("plot", cmd_plot, "render SVG charts", config=False)
    q.add_argument("kind", choices=("dihedral", "metrics", "loss"))
    q.add_argument("inputs", nargs="+", help="XYZ file, report CSVs or a loss log")
    q.add_argument("--out", required=True)
    q.add_argument("--atoms", type=int, nargs="*", default=[0, 1, 2, 3])
    q.add_argument("--variant", default="heavy_atom", choices=("all_atom", "heavy_atom"))
    q.add_argument("--title")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        status = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CGVAEError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
