"""Command-line entry point.

Subcommands cover the full pipeline: gen → ingest → train → detect → eval,
plus plan (task decomposition) and extract (report mining). Every option
resolves as defaults < config file < FEAD_* environment variable < flag,
and every run writes a manifest (config hash, input digests, wall time)
next to its primary output. Exit codes: 0 ok, 1 internal error, 2 input
error, 3 config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

from . import capmodel, evalharness, extraction, planner, provgraph
from .detector import (
    TrainConfig,
    benign_density,
    model_from_json,
    model_to_json,
    predict_type,
    train_benign,
)
from .detector.postprocess import postprocess
from .errors import ConfigError, FeadError, InputError


@dataclass(frozen=True)
class Opt:
    name: str
    type: type = str
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple = ()

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_DETECT_OPTS = [
    Opt("graph", str, required=True, help="graph snapshot produced by ingest"),
    Opt("model", str, required=True, help="model snapshot produced by train"),
    Opt("out", str, "predictions.jsonl", help="per-vertex prediction document"),
    Opt("k", int, 2, help="neighborhood radius for benign density"),
    Opt("density-threshold", float, 0.8,
        help="unflag vertices whose benign density strictly exceeds this"),
]

SUBCOMMANDS: dict[str, list[Opt]] = {
    "ingest": [
        Opt("input", str, required=True, help="event file, one JSON object per line"),
        Opt("out", str, "graph.snap", help="graph snapshot path"),
        Opt("allow-new-types", bool, False,
            help="register unseen edge-type names instead of failing"),
    ],
    "train": [
        Opt("graph", str, required=True, help="benign graph snapshot"),
        Opt("out", str, "model.json", help="model snapshot path"),
        Opt("seed", int, 0),
        Opt("epochs", int, 30),
        Opt("heads", int, 8),
        Opt("hidden-dim", int, 128),
        Opt("batch-size", int, 500),
        Opt("learning-rate", float, 0.01),
        Opt("weight-decay", float, 5e-4),
        Opt("dropout", float, 0.5),
        Opt("scorer", str, "edge_rarity", choices=("edge_rarity", "zero")),
    ],
    "detect": _DETECT_OPTS,
    "eval": [
        Opt("pred", str, required=True, help="prediction document from detect"),
        Opt("labels", str, required=True, help="label file, one JSON object per line"),
        Opt("out", str, "metrics.json"),
        Opt("table", bool, False, help="also print an aligned text table"),
    ],
    "plan": [
        Opt("catalog", str, required=True, help="collector capability catalog"),
        Opt("task", str, required=True, help="monitoring task description"),
        Opt("out", str, "plan.json"),
        Opt("decomposer", str, "rule", choices=("rule", "external")),
        Opt("depth-limit", int, 5),
        Opt("alpha", float, 0.2),
        Opt("beta-user", float, 0.7),
        Opt("beta-kernel", float, 0.5),
        Opt("beta-hw", float, 0.3),
        Opt("gamma-user", float, 10.0),
        Opt("gamma-kernel", float, 25.0),
        Opt("gamma-hw", float, 50.0),
        Opt("complexity", str, "linear", choices=("linear", "log")),
        Opt("new-impl", str, "NewUser",
            choices=("NewUser", "NewKernel", "NewHardware")),
        Opt("new-overhead", float, 0.1),
    ],
    "extract": [
        Opt("report", str, required=True, help="attack report, plain UTF-8 text"),
        Opt("out", str, "extraction.json"),
    ],
    "gen": [
        Opt("scenario", str, "generic", choices=evalharness.SCENARIOS),
        Opt("benign", int, 400),
        Opt("cluster", int, 24),
        Opt("isolated", int, 8),
        Opt("density", float, 2.0),
        Opt("seed", int, 0),
        Opt("out", str, "events.jsonl"),
        Opt("labels-out", str, "labels.jsonl"),
    ],
}


def _cast(raw: str, typ):
    if typ is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {typ.__name__}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fead", description=__doc__)
    parser.add_argument("--config", help="JSON config file merged under the flags")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, opts in SUBCOMMANDS.items():
        p = sub.add_parser(name)
        for opt in opts:
            kwargs = {"default": None, "help": opt.help, "dest": opt.dest}
            if opt.type is bool:
                kwargs["action"] = "store_const"
                kwargs["const"] = True
            else:
                kwargs["type"] = opt.type
                if opt.choices:
                    kwargs["choices"] = opt.choices
            p.add_argument(f"--{opt.name}", **kwargs)
    return parser


def resolve_options(subcommand: str, args, file_cfg: dict) -> dict:
    resolved = {}
    for opt in SUBCOMMANDS[subcommand]:
        value = getattr(args, opt.dest)
        if value is None:
            env = os.environ.get("FEAD_" + opt.dest.upper())
            if env is not None:
                value = _cast(env, opt.type)
            elif opt.dest in file_cfg:
                value = file_cfg[opt.dest]
                if isinstance(value, str) and opt.type is not str:
                    value = _cast(value, opt.type)
            else:
                value = opt.default
        if value is None and opt.required:
            raise ConfigError(f"missing required option --{opt.name}")
        if opt.choices and value not in opt.choices:
            raise ConfigError(f"--{opt.name} must be one of {', '.join(opt.choices)}")
        resolved[opt.dest] = value
    return resolved


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _emit_manifest(subcommand: str, opts: dict, inputs: dict[str, str],
                   outputs: list[str], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config_hash": _sha256(json.dumps(opts, sort_keys=True)),
        "seed": opts.get("seed"),
        "inputs": {path: _sha256(text) for path, text in inputs.items()},
        "outputs": outputs,
        "wall_time_s": round(time.monotonic() - started, 6),
    }
    primary = outputs[0] if outputs else f"{subcommand}.run"
    _write(primary + ".manifest.json", json.dumps(manifest, indent=2) + "\n")


# --- subcommand bodies: each returns ({input path: text}, [output paths]) ---


def cmd_ingest(o: dict):
    text = _read(o["input"])
    graph = provgraph.ingest_lines(text.splitlines(), allow_new_types=o["allow_new_types"])
    if graph.num_edges == 0:
        print("warning: no events ingested; writing an empty graph snapshot",
              file=sys.stderr)
    _write(o["out"], graph.to_snapshot())
    print(f"ingested {graph.num_vertices} vertices, {graph.num_edges} edges -> {o['out']}")
    return {o["input"]: text}, [o["out"]]


def cmd_train(o: dict):
    text = _read(o["graph"])
    graph = provgraph.ProvenanceGraph.from_snapshot(text)
    cfg = TrainConfig(
        heads=o["heads"], hidden_dim=o["hidden_dim"], batch_size=o["batch_size"],
        learning_rate=o["learning_rate"], weight_decay=o["weight_decay"],
        dropout=o["dropout"], epochs=o["epochs"], seed=o["seed"],
    )
    model = train_benign(graph, cfg=cfg, scorer_kind=o["scorer"])
    _write(o["out"], model_to_json(model))
    print(f"trained on {graph.num_vertices} vertices -> {o['out']}")
    return {o["graph"]: text}, [o["out"]]


def cmd_detect(o: dict):
    gtext = _read(o["graph"])
    mtext = _read(o["model"])
    graph = provgraph.ProvenanceGraph.from_snapshot(gtext)
    model = model_from_json(mtext)
    _, predicted = predict_type(model, graph)
    ids = list(graph.vertices)
    flagged = {
        vid for vid, p in zip(ids, predicted)
        if model.classes[p] != graph.vertices[vid].kind.value
    }
    kept = postprocess(graph, flagged, o["density_threshold"], o["k"])
    lines = []
    for vid, p in zip(ids, predicted):
        pre = vid in flagged
        doc = {
            "id": vid,
            "predicted": model.classes[p],
            "actual": graph.vertices[vid].kind.value,
            "anomalous_pre": pre,
            "anomalous_post": vid in kept,
            "benign_density": (
                benign_density(graph, vid, flagged, o["k"]) if pre else None
            ),
        }
        lines.append(json.dumps(doc, separators=(",", ":")))
    _write(o["out"], "".join(line + "\n" for line in lines))
    print(f"flagged {len(flagged)} vertices, {len(kept)} after locality correction "
          f"-> {o['out']}")
    return {o["graph"]: gtext, o["model"]: mtext}, [o["out"]]


def cmd_eval(o: dict):
    ptext = _read(o["pred"])
    ltext = _read(o["labels"])
    labels = evalharness.LabelSet.from_jsonl(ltext)
    flagged = set()
    seen = set()
    for lineno, line in enumerate(ptext.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: invalid JSON: {exc.msg}") from None
        seen.add(doc["id"])
        if doc.get("anomalous_post"):
            flagged.add(doc["id"])
    unlabeled = seen - set(labels.labels)
    if unlabeled:
        print(f"warning: {len(unlabeled)} prediction(s) have no label and are "
              "outside the confusion counts", file=sys.stderr)
    missing = set(labels.labels) - seen
    if missing:
        print(f"warning: {len(missing)} labeled vertex(es) have no prediction "
              "and count as unflagged", file=sys.stderr)
    metrics = evalharness.compute_metrics(flagged, labels)
    _write(o["out"], json.dumps(metrics.to_json(), indent=2) + "\n")
    print(f"f1 = {metrics.f1}")
    if o["table"]:
        print(evalharness.metrics_table({"run": metrics}), end="")
    return {o["pred"]: ptext, o["labels"]: ltext}, [o["out"]]


def cmd_plan(o: dict):
    ctext = _read(o["catalog"])
    ttext = _read(o["task"])
    catalog = capmodel.load_catalog(ctext)
    task = capmodel.load_task(ttext)
    if o["decomposer"] == "external":
        raise ConfigError(
            "the external decomposer needs a text-generation client and is "
            "only reachable through the library API; use --decomposer rule"
        )
    params = planner.CostParams(
        alpha=o["alpha"], beta_user=o["beta_user"], beta_kernel=o["beta_kernel"],
        beta_hw=o["beta_hw"], gamma_user=o["gamma_user"],
        gamma_kernel=o["gamma_kernel"], gamma_hw=o["gamma_hw"],
        complexity_model=o["complexity"],
    )
    solutions = planner.plan(
        task, catalog, planner.DecomposerStrategy("rule"), params,
        depth_limit=o["depth_limit"],
        new_impl=capmodel.ImplClass(o["new_impl"]),
        new_overhead=o["new_overhead"],
    )
    doc = planner.plan_document(task, solutions)
    _write(o["out"], json.dumps(doc, indent=2) + "\n")
    best = solutions[0]
    print(f"{len(solutions)} candidate(s); best score {best.score:.6g} with "
          f"{len(best.decomposition.subtasks)} subtask(s), "
          f"{len(best.decomposition.new_needs)} new need(s) -> {o['out']}")
    return {o["catalog"]: ctext, o["task"]: ttext}, [o["out"]]


def cmd_extract(o: dict):
    text = _read(o["report"])
    model = extraction.run_extraction(text, extraction.MockBackend())
    _write(o["out"], model.to_json())
    print(f"extracted {len(model.steps)} step(s), {len(model.items)} monitoring "
          f"item(s) -> {o['out']}")
    return {o["report"]: text}, [o["out"]]


def cmd_gen(o: dict):
    cfg = evalharness.ScenarioConfig(
        benign_vertex_count=o["benign"],
        attack_cluster_size=o["cluster"],
        isolated_anomaly_count=o["isolated"],
        edge_density=o["density"],
        seed=o["seed"],
        scenario=o["scenario"],
    )
    events, labels = evalharness.scenario_events(cfg)
    _write(o["out"], evalharness.events_to_jsonl(events))
    _write(o["labels_out"], labels.to_jsonl())
    print(f"generated {len(events)} events, {len(labels.labels)} labels "
          f"({len(labels.anomalous)} anomalous) -> {o['out']}")
    return {}, [o["out"], o["labels_out"]]


_HANDLERS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "plan": cmd_plan,
    "extract": cmd_extract,
    "gen": cmd_gen,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_cfg = {}
    if args.config:
        try:
            cfg = json.loads(_read(args.config))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file: invalid JSON: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must contain a JSON object")
        file_cfg = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
        nested = cfg.get(args.subcommand)
        if isinstance(nested, dict):
            file_cfg.update(nested)
    opts = resolve_options(args.subcommand, args, file_cfg)
    started = time.monotonic()
    inputs, outputs = _HANDLERS[args.subcommand](opts)
    _emit_manifest(args.subcommand, opts, inputs, outputs, started)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FeadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
