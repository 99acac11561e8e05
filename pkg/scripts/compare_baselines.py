"""Train every model kind on one synthetic corpus and tabulate test metrics.

Each model goes through the command-line entry point, so the checkpoints and
metrics files left in the work directory can be inspected or re-evaluated.

    python3 scripts/compare_baselines.py --work runs/compare --n-docs 2000 --epochs 30
"""
import argparse
import json
import os
import time
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from rlab import cli  # noqa: E402


def run(argv):
    code = cli.main([str(a) for a in argv])
    if code:
        raise SystemExit(f"command failed with exit code {code}: {' '.join(map(str, argv))}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("runs/compare"))
    ap.add_argument("--n-docs", type=int, default=2000)
    ap.add_argument("--noise-rate", type=float, default=0.05)
    ap.add_argument("--epochs", type=int, default=30, help="InfoCal epochs")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    args.work.mkdir(parents=True, exist_ok=True)
    corpus = args.work / "corpus.jsonl"
    run(["synth", "--n-docs", args.n_docs, "--noise-rate", args.noise_rate,
         "--seed", args.seed, "--out", corpus])

    models = {
        "logreg": [],
        "rf": ["--n-trees", 100],
        "transformer": [],
        "infocal": ["--epochs", args.epochs],
    }
    rows = []
    for name, extra in models.items():
        ckpt, metrics = args.work / f"{name}.ckpt", args.work / f"{name}.metrics.json"
        t0 = time.perf_counter()
        run(["train", "--model", name, "--corpus", corpus, "--seed", args.seed, "--out", ckpt, *extra])
        run(["eval", "--model-path", ckpt, "--split", "test", "--out", metrics])
        m = json.loads(metrics.read_text())
        rows.append((name, m["auc"], m["auprc"], m["r80"], m["f1_macro"], time.perf_counter() - t0))

    print(f"\n{'model':<12}{'AUC':>8}{'AUPRC':>8}{'R@P80':>8}{'F1':>8}{'sec':>8}")
    for name, *vals, sec in rows:
        print(f"{name:<12}" + "".join(f"{v:>8.3f}" for v in vals) + f"{sec:>8.0f}")


if __name__ == "__main__":
    main()
