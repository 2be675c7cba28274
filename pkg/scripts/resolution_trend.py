"""Train CGVAE at several bead counts with the same budget and compare heavy-atom metrics.

    python3 scripts/resolution_trend.py --N 2 3 5 --epochs 40
"""
import argparse
from dataclasses import replace

from cgvae.datasets import ChainSpec, gen_toy_trajectory, segment_mapping
from cgvae.evaluation import CGVAEBackmapper, evaluate_run
from cgvae.model import CGVAE
from cgvae.pipeline import BenchmarkConfig, multihop_pairs, split_train_test
from cgvae.training import train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, nargs="+", default=[2, 3, 5])
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--samples", type=int, default=16)
    args = p.parse_args()

    traj = gen_toy_trajectory(ChainSpec())
    train_x, test_x = split_train_test(traj, 200, 0)
    pairs = multihop_pairs(traj)
    cfg = replace(BenchmarkConfig().train, epochs=args.epochs)
    print("N  variant     rmsd_recon  lambda  valid   rmsd_gen")
    for N in args.N:
        model = CGVAE(cfg.model, traj.elements, segment_mapping(traj, N), pairs)
        train(model, train_x, cfg)
        rep = evaluate_run(CGVAEBackmapper(model), test_x, traj.elements, count=args.samples)
        for variant, r in rep.variants().items():
            print(f"{N:<2d} {variant:10s}  {r.rmsd_recon.mean:10.3f}  {r.lambda_ratio.mean:6.3f}  "
                  f"{r.valid_graph_ratio.mean:5.3f}  {r.rmsd_gen.mean:8.3f}", flush=True)


if __name__ == "__main__":
    main()
