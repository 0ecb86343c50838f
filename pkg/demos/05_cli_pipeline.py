"""The whole pipeline through the command-line interface.

Every command writes its outputs plus a manifest.json recording the config,
input hashes, and seed, so runs can be audited and reproduced byte for byte.

Run with: python3 demos/05_cli_pipeline.py
"""

import json
import os
import shutil
import tempfile

from topoprompt import cli

root = tempfile.mkdtemp(prefix="topoprompt-demo-")
print(f"working in {root}")


def run(*args):
    print("\n$ topoprompt " + " ".join(args))
    rc = cli.main(list(args))
    assert rc == 0, f"exit code {rc}"


gdir = os.path.join(root, "graphs")
os.makedirs(gdir)
for i in range(2):
    out = os.path.join(root, f"gen{i}")
    run("generate", "--out", out, "--name", f"g{i}", "--blocks", "20,20",
        "--p-in", "0.35", "--p-out", "0.04", "--seed", str(i),
        "--split-fractions", "0.5,0.25,0.25")
    shutil.copy(os.path.join(out, f"g{i}.edges"), gdir)

g0 = os.path.join(root, "gen0", "g0.edges")
run("descriptors", "--graph", g0, "--out", os.path.join(root, "desc"))
run("prompt", "--graph", g0, "--out", os.path.join(root, "pr"))
run("encode", "--graph", g0, "--out", os.path.join(root, "enc"))

run("pretrain", "--graph-dir", gdir, "--out", os.path.join(root, "pre"),
    "--epochs", "3", "--steps-per-epoch", "4", "--anchor-batch", "12",
    "--positives-topk", "6", "--seed", "42")

run("adapt", "--checkpoint", os.path.join(root, "pre", "checkpoint.bin"),
    "--graph", g0, "--graph-id", "demo", "--out", os.path.join(root, "ad"),
    "--steps", "50", "--seed", "42")

run("evaluate", "--checkpoint", os.path.join(root, "ad", "checkpoint.bin"),
    "--graph", g0, "--graph-id", "demo", "--mode", "zero-shot",
    "--labels", os.path.join(root, "gen0", "g0.labels.txt"),
    "--split", os.path.join(root, "gen0", "g0.split.txt"),
    "--out", os.path.join(root, "ev"), "--seed", "42")

report = open(os.path.join(root, "ev", "report.txt")).read()
print("\nevaluation report:")
print(report)

manifest = json.load(open(os.path.join(root, "ev", "manifest.json")))
print("manifest keys:", sorted(manifest))
print("input hashes:", {k: v[:12] + "..." for k, v in manifest["inputs"].items()})

shutil.rmtree(root)
print("\ncleaned up.")
