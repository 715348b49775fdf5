"""Experiment driver: ``mrap-sim run <config.json>`` and ``mrap-sim validate <config.json>``.

A config names one experiment kind plus the tree, pulse schedule, occlusions
and detunings.  Results go to ``report.json`` and plot-ready CSV tables in
the output directory.  The directory comes from ``--out``, then the config's
``output_dir``, then ``$MRAP_SIM_OUT``, then ``./mrap-out``.  Failures exit
nonzero and print a JSON error document on stderr.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import (
    MAX_TOTAL_TIME,
    METRIC_TARGET,
    AdiabaticityError,
    StepCountError,
    certify_schedule,
    propagate,
)
from .hamiltonian import PulseSchedule, assemble
from .ifm import (
    MinefieldScenario,
    consistent_blocked_branches,
    detect_beating,
    forbidden_nodes,
    random_minefield,
    run_ifm,
)
from .nullspace import (
    NoValidTargetError,
    analytic_null_basis,
    numeric_null_basis,
    principal_angles,
    write_null_basis_csv,
)
from .routing import DEFAULT_DELTA, RoutingRound, delta_sensitivity, run_routing
from .spectrum import gap_vs_depth, spectrum_scan, write_gap_table
from .topology import (
    DEFAULT_NODE_BUDGET,
    NodeId,
    OcclusionMask,
    TreeSizeError,
    build_tree,
    format_address,
    root_component,
)

OUT_ENV = "MRAP_SIM_OUT"
DEFAULT_OUT = "mrap-out"
SCHEMA_VERSION = 1
BUNDLED = ("fig3.json", "fig4.json", "minefield-random.json", "routing-demo.json", "beating.json")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SIZE = 3
EXIT_ADIABATIC = 4
EXIT_NO_TARGET = 5

log = logging.getLogger("mrap.cli")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


def load_schema() -> dict:
    return json.loads(resources.files("mrap.configs").joinpath("schema.json").read_text())


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("mrap.configs").joinpath(name)))


def _resolve_config_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    b = bundled_config(p.name)
    if p.parent == Path(".") and b.exists():
        return b
    raise ConfigError(f"config file not found: {path}", "")


def load_config(path: str) -> dict:
    p = _resolve_config_path(path)
    try:
        config = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}", "") from err
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    """Raise ConfigError naming the offending field when ``config`` breaks the schema."""
    validator = jsonschema.Draft202012Validator(load_schema())
    error = jsonschema.exceptions.best_match(validator.iter_errors(config))
    if error is not None:
        field = "/".join(str(p) for p in error.absolute_path)
        if error.validator == "additionalProperties":
            extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
            field = "/".join([field, *extra[:1]]) if field else (extra[0] if extra else "")
        raise ConfigError(error.message, field)


# --- building blocks -------------------------------------------------------


def _tree(config):
    t = config["tree"]
    return build_tree(
        t["depth"],
        t.get("imaging", False),
        t.get("branch_depths"),
        t.get("max_nodes", DEFAULT_NODE_BUDGET),
    )


def _node(tree, label, field):
    try:
        node = NodeId.parse(label)
        tree.index_of(node)
    except (KeyError, ValueError) as err:
        raise ConfigError(f"{label!r} is not a node of this tree", field) from err
    return node


def _occlusions(tree, config):
    pairs = []
    for k, (a, b) in enumerate(config.get("occlusions", [])):
        field = f"occlusions/{k}"
        pairs.append((_node(tree, a, field), _node(tree, b, field)))
    try:
        return OcclusionMask.from_pairs(tree, pairs)
    except KeyError as err:
        raise ConfigError(f"not a link of this tree: {err}", "occlusions") from err


def _detunings(tree, config):
    return {
        _node(tree, label, f"detunings/{label}"): float(v)
        for label, v in config.get("detunings", {}).items()
    }


def _schedule_settings(config):
    s = config.get("schedule", {})
    template = PulseSchedule(
        1.0, s.get("a_max", 1.0), s.get("b_max", 1.0), s.get("shape", "sinusoidal")
    )
    total = s.get("total_time", "auto")
    explicit = None if total == "auto" else template.with_time(float(total))
    return {
        "template": template,
        "explicit": explicit,
        "steps": s.get("steps"),
        "target": s.get("metric_target", METRIC_TARGET),
        "budget": s.get("max_total_time", MAX_TOTAL_TIME),
    }


def _certified(tree, occ, det, settings):
    return certify_schedule(
        tree, occ, det, settings["explicit"], settings["target"], settings["budget"],
        template=settings["template"],
    )


def _labels_populations(tree, pops):
    return {label: float(p) for label, p in zip(tree.labels, pops)}


# --- experiment kinds ------------------------------------------------------


def _run_evolve(config, out, seed, threads):
    tree = _tree(config)
    occ, det = _occlusions(tree, config), _detunings(tree, config)
    block = config.get("evolve", {})
    settings = _schedule_settings(config)
    schedule, metric = _certified(tree, occ, det, settings)
    initial = block.get("initial", "0_e")
    psi0 = np.zeros(tree.n_nodes, dtype=complex)
    psi0[tree.index_of(_node(tree, initial, "evolve/initial"))] = 1.0
    forbidden = forbidden_nodes(tree, occ) if tree.imaging else []
    traj = propagate(
        tree, schedule, occ, det, psi0, settings["steps"], block.get("samples", 201),
        block.get("method", "taylor"),
        groups={"forbidden": [n.label for n in forbidden]},
    )
    traj.to_csv(out / "trajectory.csv")
    pops = traj.populations
    transient = {}
    for label in tree.labels:
        k = tree.index_of(label)
        j = int(np.argmax(pops[:, k]))
        if 0 < j < len(traj.times) - 1:
            transient[label] = {"t": float(traj.times[j]), "population": float(pops[j, k])}
    return {
        "total_time": schedule.total_time,
        "metric": metric,
        "steps": traj.steps,
        "norm_drift": traj.norm_drift(),
        "final_populations": _labels_populations(tree, traj.final_populations),
        "peak_populations": _labels_populations(tree, traj.peak_populations),
        "interior_maxima": transient,
        "forbidden_peak": traj.group_peaks["forbidden"],
    }, ["trajectory.csv"]


def _run_spectrum(config, out, seed, threads):
    tree = _tree(config)
    occ, det = _occlusions(tree, config), _detunings(tree, config)
    settings = _schedule_settings(config)
    schedule = settings["explicit"] or settings["template"]
    rep = spectrum_scan(tree, schedule, occ, det, config.get("spectrum", {}).get("n_samples", 201))
    rep.to_csv(out / "spectrum.csv")
    return {
        "min_gap": rep.min_gap,
        "min_gap_t": rep.min_gap_t,
        "zero_multiplicity": [int(z) for z in rep.zero_multiplicity],
        "eigenvalues_start": [float(e) for e in rep.eigenvalues[0]],
        "eigenvalues_end": [float(e) for e in rep.eigenvalues[-1]],
    }, ["spectrum.csv"]


def _run_gap_scan(config, out, seed, threads):
    block = config["gap_scan"]
    settings = _schedule_settings(config)
    budget = config["tree"].get("max_nodes", DEFAULT_NODE_BUDGET)
    imaging = config["tree"].get("imaging", True)
    for d in block["depths"]:
        build_tree(d, imaging, max_nodes=budget)  # fail fast on oversized depths
    rows = gap_vs_depth(
        block["depths"], settings["template"], block.get("n_samples", 201), imaging, threads
    )
    write_gap_table(out / "gap_vs_depth.csv", rows)
    gaps = [g for _, g in rows]
    return {
        "min_gap": {str(d): g for d, g in rows},
        "strictly_decreasing": bool(all(a > b for a, b in zip(gaps, gaps[1:]))),
    }, ["gap_vs_depth.csv"]


def _run_ifm(config, out, seed, threads):
    tree = _tree(config)
    block = config.get("ifm", {})
    rng = np.random.default_rng(seed)
    random_spec = block.get("random_bombs")
    if random_spec is not None:
        if config.get("occlusions"):
            raise ConfigError("give either occlusions or ifm.random_bombs, not both", "ifm/random_bombs")
        bombs = random_minefield(tree, random_spec["count"], rng, random_spec.get("plane_only", True))
    else:
        bombs = _occlusions(tree, config)
    if config.get("detunings"):
        raise ConfigError("minefield runs take no detunings", "detunings")
    settings = _schedule_settings(config)
    scenario = MinefieldScenario(tree, bombs, block.get("trials", 1000), int(rng.integers(2**63)))
    res = run_ifm(
        scenario, settings["explicit"], settings["steps"], settings["target"], settings["budget"],
    )
    with open(out / "detections.csv", "w") as fh:
        fh.write("receiver,count,population\n")
        for a, c in res.counts.items():
            fh.write(f"{format_address(a)},{c},{res.receiver_populations[a]:.12g}\n")
    d = res.to_dict()
    d["bombs"] = sorted([e.src.label, e.dst.label] for e in bombs.edges)
    d["consistent_blocked_branches"] = sorted(
        format_address(a) for a in consistent_blocked_branches(tree, bombs)
    )
    return d, ["detections.csv"]


def _run_routing(config, out, seed, threads):
    tree = _tree(config)
    if config.get("occlusions") or config.get("detunings"):
        raise ConfigError("routing sets its own detunings and takes no occlusions", "routing")
    block = config.get("routing", {})
    rng = np.random.default_rng(seed)
    known = {format_address(r.address) for r in tree.receivers}
    rounds = []
    for k, r in enumerate(block.get("rounds", [])):
        unknown = sorted(set(r["active"]) - known)
        if unknown:
            raise ConfigError(f"not receivers of this tree: {unknown}", f"routing/rounds/{k}/active")
        rounds.append(
            RoutingRound(r["active"], r.get("delta", DEFAULT_DELTA), r.get("particles", 1000))
        )
    rand = block.get("random_rounds")
    if rand:
        addresses = [r.address for r in tree.receivers]
        deltas = rand.get("deltas", [DEFAULT_DELTA])
        for _ in range(rand["count"]):
            active = [a for a in addresses if rng.random() < 0.5]
            rounds.append(RoutingRound(active, float(rng.choice(deltas)), rand.get("particles", 1000)))
    settings = _schedule_settings(config)
    report = run_routing(
        tree, rounds, settings["explicit"], settings["steps"], int(rng.integers(2**63)),
        settings["target"], settings["budget"], threads,
    )
    report.to_csv(out / "tally.csv")
    result = report.to_dict()
    files = ["tally.csv"]
    sweep = block.get("delta_sweep")
    if sweep and set(sweep["active"]) - known:
        raise ConfigError("not receivers of this tree", "routing/delta_sweep/active")
    if sweep:
        rows = delta_sensitivity(
            tree, sweep["active"], sweep["deltas"], settings["explicit"], settings["steps"],
            settings["target"], settings["budget"],
        )
        with open(out / "delta_sweep.csv", "w") as fh:
            fh.write("delta,total_time,metric,inactive_population\n")
            for r in rows:
                fh.write(f"{r['delta']:.10g},{r['total_time']:.10g},{r['metric']:.10g},"
                         f"{r['inactive_population']:.12g}\n")
        result["delta_sweep"] = rows
        files.append("delta_sweep.csv")
    return result, files


def _run_null_check(config, out, seed, threads):
    tree = _tree(config)
    occ, det = _occlusions(tree, config), _detunings(tree, config)
    block = config.get("null_check", {})
    rng = np.random.default_rng(seed)
    couplings = [tuple(c) for c in block.get("couplings", [])]
    couplings += [tuple(rng.uniform(0.05, 1.0, 2)) for _ in range(block.get("random_instances", 0))]
    if not couplings:
        couplings = [(1 / np.sqrt(2), 1 / np.sqrt(2))]
    support = root_component(tree, occ)
    rows = []
    for A, B in couplings:
        analytic = analytic_null_basis(tree, A, B, occ, det)
        U = np.array([v.amplitudes for v in analytic]).T.reshape(tree.n_nodes, len(analytic))
        V = numeric_null_basis(assemble(tree, A, B, occ, det, fmt="dense"), support=support)
        same = U.shape[1] == V.shape[1]
        angle = float(principal_angles(U, V).max(initial=0.0)) if same else None
        rows.append({
            "A": float(A), "B": float(B),
            "analytic_dimension": U.shape[1], "numeric_dimension": V.shape[1],
            "max_principal_angle": angle,
        })
    A, B = couplings[0]
    write_null_basis_csv(out / "null_basis.csv", analytic_null_basis(tree, A, B, occ, det), tree.labels)
    return {
        "instances": rows,
        "all_agree": all(r["max_principal_angle"] is not None and r["max_principal_angle"] < 1e-8
                         for r in rows),
    }, ["null_basis.csv"]


def _run_beating(config, out, seed, threads):
    tree = _tree(config)
    occ = _occlusions(tree, config)
    settings = _schedule_settings(config)
    if settings["explicit"] is None:
        raise ConfigError("beating runs need an explicit total_time", "schedule/total_time")
    block = config.get("beating", {})
    rep = detect_beating(
        tree, settings["explicit"], occ, settings["steps"], block.get("samples", 1001),
        block.get("threshold", 1e-3),
    )
    with open(out / "return_probability.csv", "w") as fh:
        fh.write("t/T,root_population\n")
        for t, p in zip(rep.times, rep.return_probability):
            fh.write(f"{t:.10g},{p:.12g}\n")
    return rep.to_dict(), ["return_probability.csv"]


RUNNERS = {
    "evolve": _run_evolve,
    "spectrum": _run_spectrum,
    "gap-scan": _run_gap_scan,
    "ifm": _run_ifm,
    "routing": _run_routing,
    "null-check": _run_null_check,
    "beating": _run_beating,
}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def output_dir(config: dict, override: str | None = None) -> Path:
    return Path(override or config.get("output_dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def run_config(config: dict, out: Path, seed: int | None = None, threads: int = 1) -> dict:
    """Validate, run and write ``report.json`` plus CSV tables into ``out``.

    The report is deterministic for a given config and seed except for its
    ``generated_at`` field.
    """
    validate_config(config)
    seed = int(config.get("seed", 0) if seed is None else seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result, files = RUNNERS[config["kind"]](config, out, seed, max(1, int(threads)))
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": config["kind"],
        "seed": seed,
        "package_version": _version(),
        "config": config,
        "result": result,
        "files": files,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _error_document(err: Exception) -> tuple[int, dict]:
    doc = {"error": type(err).__name__, "message": str(err)}
    if isinstance(err, ConfigError):
        doc["field"] = err.field
        return EXIT_CONFIG, doc
    if isinstance(err, TreeSizeError):
        doc["field"] = "tree"
        return EXIT_SIZE, doc
    if isinstance(err, AdiabaticityError):
        doc["field"] = "schedule/total_time"
        doc["metric"] = err.metric
        doc["suggested_total_time"] = err.suggested_time
        return EXIT_ADIABATIC, doc
    if isinstance(err, NoValidTargetError):
        return EXIT_NO_TARGET, doc
    if isinstance(err, StepCountError):
        doc["field"] = "schedule/steps"
        return EXIT_CONFIG, doc
    return EXIT_ERROR, doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrap-sim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="config path, or the name of a bundled config")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    val = sub.add_parser("validate", help="check a config against the schema")
    val.add_argument("config")
    sub.add_parser("list", help="list bundled configs")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for name in BUNDLED:
            print(bundled_config(name))
        return EXIT_OK
    try:
        config = load_config(args.config)
        if args.command == "validate":
            _tree(config)
            print(json.dumps({"status": "valid", "config": args.config}))
            return EXIT_OK
        out = output_dir(config, args.out)
        run_config(config, out, args.seed, args.threads)
    except Exception as err:  # every failure becomes a JSON document
        code, doc = _error_document(err)
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        return code
    print(json.dumps({"status": "ok", "report": str(out / "report.json")}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
