"""Train small InfoCal and transformer models, explain the test split and
render a side-by-side highlight report for one document.

    python3 scripts/explain_demo.py --work runs/demo
    open runs/demo/report.html
"""
import argparse
import json
import os
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from rlab import cli  # noqa: E402


def run(*argv):
    code = cli.main([str(a) for a in argv])
    if code:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description="explanation walkthrough")
    ap.add_argument("--work", type=Path, default=Path("runs/demo"))
    ap.add_argument("--n-docs", type=int, default=600)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--format", choices=["html", "ansi"], default="html")
    args = ap.parse_args()
    w = args.work
    w.mkdir(parents=True, exist_ok=True)

    corpus = w / "corpus.jsonl"
    run("synth", "--n-docs", args.n_docs, "--noise-rate", 0, "--seed", 3, "--out", corpus)
    run("train", "--model", "infocal", "--corpus", corpus, "--epochs", args.epochs,
        "--hidden", 64, "--embedding-dim", 32, "--out", w / "infocal.ckpt")
    run("train", "--model", "transformer", "--corpus", corpus, "--epochs", 15,
        "--out", w / "transformer.ckpt")

    run("explain", "--model-path", w / "infocal.ckpt", "--method", "rationale",
        "--out", w / "rationale.jsonl")
    for method in ("attention", "lrp"):
        run("explain", "--model-path", w / "transformer.ckpt", "--method", method,
            "--out", w / f"{method}.jsonl")

    # pick the first positive test document with a non-empty rationale
    doc_id = None
    for line in (w / "rationale.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["label"] == 1 and rec["kept_positions"]:
            doc_id = rec["doc_id"]
            break
    out = w / ("report.html" if args.format == "html" else "report.txt")
    report = ["report", "--corpus", corpus, "--rationale", w / "rationale.jsonl",
              "--attention", w / "attention.jsonl", "--lrp", w / "lrp.jsonl",
              "--format", args.format, "--out", out]
    if doc_id:
        report += ["--doc-id", doc_id]
    run(*report)
    print(f"report written to {out}")


if __name__ == "__main__":
    main()
