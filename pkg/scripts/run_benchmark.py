"""Toy benchmark: CGVAE against linear and MLP backmapping on the decane chain.

    python3 scripts/run_benchmark.py --out results/benchmark [--N 3] [--epochs 200]
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from cgvae.evaluation import METRICS
from cgvae.pipeline import BenchmarkConfig, run_benchmark, summary_lines
from cgvae.plotting import bar_chart_svg


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/benchmark")
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mapping", choices=("autograin", "segments"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = BenchmarkConfig(N=args.N)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if args.mapping:
        cfg.mapping = args.mapping
    result = run_benchmark(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in result.reports.items():
        rep.write_csv(out / f"{name}.csv")
    for variant in ("all_atom", "heavy_atom"):
        series = {n: [getattr(getattr(r, variant), m).mean for m in METRICS] for n, r in result.reports.items()}
        errors = {n: [getattr(getattr(r, variant), m).stderr for m in METRICS] for n, r in result.reports.items()}
        (out / f"{variant}.svg").write_text(bar_chart_svg(list(METRICS), series, title=f"N={args.N} {variant}",
                                                          errors=errors))
    text = "\n".join(summary_lines(result))
    (out / "summary.txt").write_text(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
