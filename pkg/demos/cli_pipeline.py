"""
The command-line pipeline
=========================

Drives the six subcommands in process, the same entry point the ``radkg``
console script uses: generate data, build the graph, train, evaluate, predict,
and verify gradients. Every output artifact carries its effective
configuration as comment lines, so a result file is traceable on its own.
"""

import pathlib
import tempfile

from radkg.cli import main

root = pathlib.Path(tempfile.mkdtemp(prefix="radkg_demo_"))
print(f"working in {root}\n")


def run(*args):
    printable = " ".join(a if " " not in a else f"'{a}'" for a in args)
    print(f"$ radkg {printable}")
    rc = main(list(args))
    print(f"(exit {rc})\n")
    assert rc == 0


run("synth",
    "--out-features", str(root / "features.csv"),
    "--out-annotations", str(root / "annotations.csv"),
    "--m", "120", "--n", "5", "--dim", "16",
    "--noise-scale", "0.5", "--uncertain-fraction", "0.1", "--seed", "1")

run("build-kg",
    "--annotations", str(root / "annotations.csv"),
    "--out", str(root / "graph.tsv"),
    "--policy", "separate", "--cooccurrence")

print("graph head:")
for line in (root / "graph.tsv").read_text().splitlines()[:6]:
    print(f"  {line}")
print()

run("train",
    "--features", str(root / "features.csv"),
    "--annotations", str(root / "annotations.csv"),
    "--out-checkpoint", str(root / "model.rkg"),
    "--out-history", str(root / "history.csv"),
    "--policy", "separate",
    "--embed-dim", "25", "--lr", "0.01", "--epochs", "15",
    "--batch-size", "16", "--seed", "0")

run("eval",
    "--checkpoint", str(root / "model.rkg"),
    "--features", str(root / "features.csv"),
    "--annotations", str(root / "annotations.csv"),
    "--fold", "test", "--tau", "0.5")

run("predict",
    "--checkpoint", str(root / "model.rkg"),
    "--features", str(root / "features.csv"),
    "--out", str(root / "predictions.csv"),
    "--ids", "img00002,img00007", "--tau", "0.5")

print("predictions:")
for line in (root / "predictions.csv").read_text().splitlines():
    if not line.startswith("#"):
        print(f"  {line}")
print()

# The same checks the test suite runs, scaled down to finish in seconds.
run("gradcheck", "--scorer", "conve", "--dim", "32", "--embed-dim", "25",
    "--channels", "2", "--n", "5", "--trials", "2")
