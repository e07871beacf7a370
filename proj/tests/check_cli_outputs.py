"""Runs every CLI subcommand on a small synthetic store and validates the
JSON outputs against the shipped schemas.

usage: check_cli_outputs.py <itnas-binary> <repo-root> <scratch-dir>
"""

import csv
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema
from referencing import Registry, Resource

cli, root, scratch = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
schemas = root / "schemas"
shutil.rmtree(scratch, ignore_errors=True)
scratch.mkdir(parents=True)

registry = Registry()
loaded = {}
for p in schemas.glob("*.schema.json"):
    doc = json.loads(p.read_text())
    loaded[p.name] = doc
    registry = registry.with_resource(p.name, Resource.from_contents(doc))

failures = []


def run(*args, expect=0):
    r = subprocess.run([cli, *map(str, args)], capture_output=True, text=True)
    if r.returncode != expect:
        failures.append(f"{' '.join(map(str, args))}: exit {r.returncode}, stderr {r.stderr.strip()!r}")
    return r


def validate(path, schema):
    try:
        doc = json.loads(pathlib.Path(path).read_text())
        jsonschema.Draft202012Validator(loaded[schema], registry=registry).validate(doc)
    except Exception as e:  # noqa: BLE001
        failures.append(f"{path} vs {schema}: {e}")


def csv_header(path):
    with open(path, newline="") as f:
        return next(csv.reader(f))


cfg = scratch / "synthetic.json"
cfg.write_text(json.dumps({"n_archs": 12, "n_datasets": 4, "latent_dim": 2, "horizon": 8,
                           "noise_scale": 0.01, "seed": 2}))
hyper = scratch / "hyper.json"
hyper.write_text(json.dumps({"latent_dim": 2, "sgd_epochs": 150}))
validate(cfg, "synthetic_config.schema.json")
validate(hyper, "hyperparams.schema.json")

data = scratch / "data"
run("gen-synthetic", "--config", cfg, "--out-dir", data, "--seed", 5)
validate(data / "truth.json", "truth.schema.json")
if csv_header(data / "observations.csv") != ["dataset_id", "arch_id", "accuracy"]:
    failures.append("observations.csv header")
store = data

run("fit", "--store", store, "--holdout", 3, "--config", hyper, "--seed", 1, "--out", scratch / "model.json")
validate(scratch / "model.json", "checkpoint.schema.json")
run("fit", "--store", store, "--prefix", 3, "--config", hyper, "--out", scratch / "model_t3.json")
validate(scratch / "model_t3.json", "checkpoint.schema.json")

run("recommend", "--store", store, "--model", scratch / "model.json", "--dataset", 3, "--top", 5,
    "--config", hyper, "--seed", 1, "--out", scratch / "rec.csv")
if csv_header(scratch / "rec.csv") != ["rank", "arch_id", "criterion", "score", "mean", "variance"]:
    failures.append("recommend header")

run("simulate-search", "--store", store, "--holdout", 3, "--budget", 4, "--config", hyper, "--seed", 1,
    "--out", scratch / "trace.csv")
validate(scratch / "trace.json", "search_summary.schema.json")
run("simulate-search", "--store", store, "--holdout", 3, "--budget", 4, "--method", "random", "--seed", 1,
    "--out", scratch / "rtrace.csv", "--summary", scratch / "rsummary.json")
validate(scratch / "rsummary.json", "search_summary.schema.json")

run("simulate-earlystop", "--store", store, "--holdout", 3, "--delta", 0.1, "--config", hyper, "--seed", 1,
    "--out", scratch / "accel.json")
validate(scratch / "accel.json", "acceleration_report.schema.json")
if csv_header(scratch / "accel.csv") != ["arch_id", "stop_epoch", "final_or_last_accuracy", "stopped_early"]:
    failures.append("simulate-earlystop csv header")

run("eval-rank", "--store", store, "--holdout", 3, "--known", 3, "--prefixes", "1,3,7", "--repetitions", 2,
    "--config", hyper, "--seed", 1, "--out", scratch / "rank.csv", "--summary", scratch / "rank.json")
validate(scratch / "rank.json", "rank_summary.schema.json")

# Errors exit non-zero with a single diagnostic line.
bad = run("simulate-search", "--store", store, "--holdout", 9, "--out", scratch / "x.csv", expect=1)
if not bad.stderr.startswith("error: ") or bad.stderr.count("\n") != 1:
    failures.append(f"unexpected diagnostic {bad.stderr!r}")
run("fit", "--store", scratch / "missing", "--out", scratch / "x.json", expect=105)
run("fit", "--store", store, "--prefix", 8, "--out", scratch / "x.json", expect=1)
run("simulate-earlystop", "--store", store, "--holdout", 11, "--out", scratch / "x.json", expect=1)
run("bogus", expect=106)

# An unseen dataset is a cold start, not an error.
run("recommend", "--store", store, "--dataset", 9, "--out", scratch / "cold.csv")
if csv_header(scratch / "cold.csv")[2:3] != ["criterion"]:
    failures.append("cold-start header")

for f in failures:
    print("FAIL", f)
print(f"{len(failures)} failure(s)")
sys.exit(1 if failures else 0)
