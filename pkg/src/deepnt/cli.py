"""Batch command-line front end.

Subcommands: ``generate``, ``train``, ``eval``, ``ablate``, ``reconstruct``
and ``replay``. Every option can also come from a flat ``key = value``
config file (``--config``); flags win over the file. Each run first writes
``manifest.json`` into its output directory with the fully resolved
settings, so ``deepnt replay out/manifest.json`` reproduces it.

Exit codes: 0 success, 2 bad flags or config, 3 I/O or generation
failure, 4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluate as ev
from . import learner, ppm
from . import model as nn
from .graph import DenseAdjacency, GraphError, read_edge_list, write_edge_list

log = logging.getLogger("deepnt")

EXIT_FLAGS, EXIT_IO, EXIT_DIVERGED = 2, 3, 4

DATA_FILES = {"graph": "graph.edges", "metrics": "metrics.txt", "observed": "observed.edges",
              "observations": "observations.csv", "dataset": "dataset.json"}


class UsageError(Exception):
    """Bad flag or config value (exit 2)."""


class InputError(Exception):
    """Missing or unreadable input, or a failed generation stage (exit 3)."""


# -- option tables ---------------------------------------------------------------

def _seeds(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).replace(";", ",").split(",") if x.strip())


def _optional(kind):
    def conv(text):
        return None if str(text).lower() in ("", "none") else kind(text)
    return conv


def _field_types(cls, overrides=None):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name == "optim":
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        out[f.name] = type(default) if default is not None else str
    out.update(overrides or {})
    return out


OPTIM_KEYS = _field_types(learner.OptimConfig, {"eta_adj": _optional(float),
                                                "feature_dim": _optional(int)})
GRAPH_KEYS = {k: t for k, t in _field_types(ev.ExperimentConfig, {"seeds": _seeds,
                                                                  "edge_list": _optional(str)}).items()}
COMMON_KEYS = {"seed": int, "threads": int, "out": str, "log_every": int}
# topology scoring threshold for eval/reconstruct comes from the checkpoint's own tau

COMMANDS = {
    "generate": {**{k: GRAPH_KEYS[k] for k in ("model", "n", "p", "k", "beta", "m", "edge_list", "kind",
                                                "delta", "Delta", "monitor_fraction")},
                 **COMMON_KEYS},
    "train": {**OPTIM_KEYS, **COMMON_KEYS, "data": str},
    "eval": {**COMMON_KEYS, "data": str, "checkpoint": _optional(str), "method": str,
             "nmf_rank": int, "nmf_iters": int, "mlp_hidden": int},
    "ablate": {**GRAPH_KEYS, **OPTIM_KEYS, **COMMON_KEYS, "grid": list},
    "reconstruct": {**COMMON_KEYS, "data": str, "checkpoint": str, "block": int},
}

DEFAULTS = {
    "seed": 0, "threads": 1, "log_every": 0, "method": "deepnt", "checkpoint": None, "block": 50,
    "grid": [],
    **{f.name: f.default for f in dataclasses.fields(learner.OptimConfig)},
    **{f.name: f.default for f in dataclasses.fields(ev.ExperimentConfig) if f.name != "optim"},
}
DEFAULTS["method"] = "deepnt"

HELP = {
    "seed": "master seed; every stage draws from a named sub-stream of it",
    "threads": "accepted for interface compatibility; computation is single-threaded",
    "out": "output directory",
    "data": "dataset directory written by 'generate'",
    "checkpoint": "checkpoint file written by 'train'",
    "grid": "sweep axis such as delta=0.1,0.2,0.3 (repeatable)",
    "config": "flat key = value file; flags override it",
}


def _add_flags(parser: argparse.ArgumentParser, keys: dict):
    parser.add_argument("--config", help=HELP["config"])
    for key, kind in keys.items():
        names = [f"--{key}"]
        if "_" in key:
            names.append(f"--{key.replace('_', '-')}")
        if kind is list:
            parser.add_argument(*names, dest=key, action="append", default=argparse.SUPPRESS,
                                help=HELP.get(key))
        else:
            parser.add_argument(*names, dest=key, default=argparse.SUPPRESS, help=HELP.get(key),
                                metavar=key.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepnt", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"deepnt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        _add_flags(sub.add_parser(name, help=f"{name} command"), keys)
    rp = sub.add_parser("replay", help="re-run a command from its manifest")
    rp.add_argument("manifest")
    return parser


def read_config_file(path) -> dict:
    """Parse a sectionless ``key = value`` file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    return dict(cp["run"])


def resolve(command: str, flags: dict) -> dict:
    """Merge defaults, config file and flags, then convert every value."""
    keys = COMMANDS[command]
    merged = {}
    if flags.get("config"):
        for k, v in read_config_file(flags["config"]).items():
            if k not in keys:
                raise UsageError(f"unknown config key {k!r} for '{command}'")
            merged[k] = [v] if keys[k] is list and not isinstance(v, list) else v
    merged.update({k: v for k, v in flags.items() if k != "config"})
    out = {}
    for key, kind in keys.items():
        raw = merged.get(key, DEFAULTS.get(key))
        if raw is None:
            out[key] = None
            continue
        try:
            if kind is bool:
                out[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
            elif kind is list:
                out[key] = list(raw)
            else:
                out[key] = kind(raw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
    if out.get("threads") is not None and out["threads"] < 1:
        raise UsageError("threads must be at least 1")
    if not out.get("out"):
        raise UsageError("--out is required")
    return out


# -- manifests --------------------------------------------------------------------

def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _inputs(cfg: dict) -> dict:
    found = {}
    if cfg.get("data"):
        for name in DATA_FILES.values():
            p = Path(cfg["data"]) / name
            if p.exists():
                found[str(p)] = _digest(p)
    for key in ("checkpoint", "edge_list"):
        if cfg.get(key) and Path(cfg[key]).exists():
            found[str(cfg[key])] = _digest(cfg[key])
    return found


def write_manifest(command: str, cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg["seeds"]) if cfg.get("seeds") else [cfg.get("seed", 0)]
    manifest = {"command": command, "version": __version__, "config": cfg, "inputs": _inputs(cfg),
                "seeds": seeds, "output_dir": str(out)}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n", encoding="utf-8")
    return path


# -- helpers ----------------------------------------------------------------------

def _optim(cfg: dict) -> learner.OptimConfig:
    try:
        return learner.OptimConfig(**{k: cfg[k] for k in OPTIM_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_dataset(data) -> dict:
    d = Path(data)
    try:
        meta = json.loads((d / DATA_FILES["dataset"]).read_text(encoding="utf-8"))
        A_obs = read_edge_list(d / DATA_FILES["observed"])
        G = read_edge_list(d / DATA_FILES["graph"])
        obs = ppm.read_observations(d / DATA_FILES["observations"], A_obs.n)
    except (OSError, ValueError, KeyError, GraphError) as exc:
        raise InputError(f"cannot load dataset {data}: {exc}") from exc
    obs.monitors = meta.get("monitors", [])
    obs.delta = meta.get("delta", 0.0)
    return {"meta": meta, "A_obs": A_obs, "A_true": G, "obs": obs}


def _load_checkpoint(path) -> dict:
    try:
        return nn.load_checkpoint(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load checkpoint {path}: {exc}") from exc


def _write_dense(path, A) -> None:
    np.savetxt(path, np.asarray(A), delimiter=",", fmt="%.17g")


# -- commands ---------------------------------------------------------------------

def _validate_generate(cfg: dict) -> None:
    if not 0 < cfg["delta"] < 1:
        raise UsageError("delta must lie in (0, 1)")
    if not 0 <= cfg["Delta"] < 1:
        raise UsageError("Delta must lie in [0, 1)")
    if not 0 < cfg["monitor_fraction"] <= 1:
        raise UsageError("monitor_fraction must lie in (0, 1]")
    try:
        ppm.MetricKind.parse(cfg["kind"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _int_pairs(edges) -> list:
    return [[int(a), int(b)] for a, b in edges]


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    seed = cfg["seed"]
    _validate_generate(cfg)
    if cfg["edge_list"]:
        try:
            G = read_edge_list(cfg["edge_list"])
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read {cfg['edge_list']}: {exc}") from exc
    else:
        try:
            G = ppm.generate_graph(cfg["model"], cfg["n"], seed, p=cfg["p"], k=cfg["k"], beta=cfg["beta"],
                                   m=cfg["m"])
        except GraphError as exc:
            # out-of-range generator parameters are flag errors
            raise UsageError(str(exc)) from exc
        except ppm.SimulationError as exc:
            raise InputError(f"[graph] {exc}") from exc
    stage = "metrics"
    try:
        metrics = ppm.assign_edge_metrics(G, cfg["kind"], seed)
        truth = ppm.all_pairs_ground_truth(G, metrics, cfg["kind"])
        stage = "corruption"
        topo = ppm.corrupt_topology(G, cfg["Delta"], seed)
        stage = "sampling"
        obs = ppm.sample_observations(truth, cfg["delta"], cfg["monitor_fraction"], seed)
    except (GraphError, ppm.SimulationError, ppm.SamplingError) as exc:
        raise InputError(f"[{stage}] {exc}") from exc
    write_edge_list(out / DATA_FILES["graph"], G)
    ppm.write_metrics(out / DATA_FILES["metrics"], G, metrics)
    write_edge_list(out / DATA_FILES["observed"], topo.A_obs)
    ppm.write_observations(out / DATA_FILES["observations"], obs)
    meta = {"kind": ppm.MetricKind.parse(cfg["kind"]).value, "n": G.n, "seed": seed, "delta": cfg["delta"],
            "Delta": cfg["Delta"], "monitors": [int(x) for x in obs.monitors],
            "removed": _int_pairs(topo.removed), "added": _int_pairs(topo.added)}
    (out / DATA_FILES["dataset"]).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote dataset with %d train, %d validation, %d test pairs to %s",
             len(obs.train), len(obs.validation), len(obs.test), out)
    return 0


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    data = _load_dataset(cfg["data"])
    optim = _optim(cfg)
    kind = data["meta"]["kind"]
    try:
        res = learner.train(data["obs"], data["A_obs"], kind, optim, cfg["seed"],
                            log_every=cfg["log_every"])
    except learner.TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    rng_state = ppm.stage_rng(cfg["seed"], "model").bit_generator.state
    nn.save_checkpoint(out / "checkpoint.npz", res.params, res.problem.H0, res.A, kind=kind,
                       scaler=res.problem.scaler, rng_state=rng_state,
                       meta={"config": learner.config_dict(optim), "seed": cfg["seed"],
                             "best_epoch": res.best_epoch})
    learner.write_history(out / "history.csv", res.history)
    write_edge_list(out / "learned.edges", DenseAdjacency(res.A))
    _write_dense(out / "learned.csv", res.A)
    log.info("best epoch %d, validation loss %.6g", res.best_epoch, res.history[res.best_epoch]["val_loss"])
    return 0


def _result_row(method, data, preds, A_learned, tau):
    meta, obs = data["meta"], data["obs"]
    truths = np.array([y for *_, y in obs.test])
    row = {"method": method, "kind": meta["kind"], "n": meta["n"], "delta": meta["delta"],
           "Delta": meta["Delta"], "seed": meta["seed"], **ev.score(meta["kind"], preds, truths)}
    row["topo_p"], row["topo_r"], row["topo_f1"] = ev.topology_f1(data["A_true"], A_learned, tau)
    row["seconds"] = 0.0
    return row


def cmd_eval(cfg: dict) -> int:
    out = Path(cfg["out"])
    data = _load_dataset(cfg["data"])
    obs, n = data["obs"], data["meta"]["n"]
    pairs = [(u, v) for u, v, _ in obs.test]
    method = cfg["method"]
    if method not in ev.METHODS:
        raise UsageError(f"method must be one of {ev.METHODS}")
    tau = learner.OptimConfig().tau
    if cfg["checkpoint"]:
        ck = _load_checkpoint(cfg["checkpoint"])
        optim = learner.OptimConfig(**ck["meta"]["config"])
        preds = learner.predict_with(ck["params"], ck["A"], ck["H0"], ck["kind"], ck["scaler"], optim, pairs)
        A_learned, tau = ck["A"], optim.tau
    elif method.startswith("deepnt"):
        raise UsageError("deepnt evaluation needs --checkpoint")
    else:
        seed = data["meta"]["seed"]
        if method == "nmf":
            preds = ev.baseline_nmf(obs, n, cfg["nmf_rank"], cfg["nmf_iters"], seed, pairs)
        elif method == "mlp":
            preds = ev.baseline_mlp(obs, n, seed, data["meta"]["kind"], cfg["mlp_hidden"], pairs=pairs)
        else:
            preds = ev.baseline_mean(obs, pairs)
        A_learned = data["A_obs"].w
    row = _result_row(method, data, preds, A_learned, tau)
    ev.write_results(out / "results.csv", [row], timing=False)
    log.info("%s: %s", method, {k: row[k] for k in ("mape", "mse", "acc", "f1", "topo_f1")})
    return 0


def _parse_grid(items) -> list[tuple[str, list]]:
    axes = []
    for item in items:
        if "=" not in item:
            raise UsageError(f"grid axis {item!r} should look like key=v1,v2")
        key, values = item.split("=", 1)
        key = key.strip()
        if key not in ("delta", "Delta", "monitor_fraction", "alpha", "gamma", "N"):
            raise UsageError(f"cannot sweep {key!r}")
        kind = int if key == "N" else float
        try:
            axes.append((key, [kind(v) for v in values.split(",") if v.strip()]))
        except ValueError as exc:
            raise UsageError(f"bad grid values in {item!r}") from exc
    return axes


def cmd_ablate(cfg: dict) -> int:
    out = Path(cfg["out"])
    axes = _parse_grid(cfg["grid"])
    points = [{}]
    for key, values in axes:
        points = [{**p, key: v} for p in points for v in values]
    summary, per_seed = [], []
    for point in points:
        for method in ("deepnt", "deepnt_alpha", "deepnt_gamma"):
            local = {**cfg, **point}
            try:
                exp = ev.ExperimentConfig(**{k: local[k] for k in GRAPH_KEYS if k != "method"},
                                          method=method, optim=_optim(local))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            try:
                rec = ev.run_experiment(exp)
            except ev.StageError as exc:
                if isinstance(exc.__cause__, learner.TrainingDiverged):
                    log.error("training diverged: %s", exc)
                    raise SystemExit(EXIT_DIVERGED) from exc
                if exc.stage != "training":
                    raise InputError(str(exc)) from exc
                raise
            per_seed.extend(rec.rows)
            agg = rec.aggregate
            row = {**rec.rows[0], **agg, "seed": ";".join(str(s) for s in exp.seeds)}
            summary.append(row)
            log.info("%s %s mape %.4g topo_f1 %.4g", method, point, agg["mape"], agg["topo_f1"])
    ev.write_results(out / "results.csv", summary, timing=False)
    ev.write_results(out / "results_per_seed.csv", per_seed, timing=False)
    return 0


def cmd_reconstruct(cfg: dict) -> int:
    out = Path(cfg["out"])
    data = _load_dataset(cfg["data"])
    ck = _load_checkpoint(cfg["checkpoint"])
    if cfg["block"] < 1:
        raise UsageError("block must be positive")
    ev.export_heatmaps(out, data["A_true"], data["A_obs"], ck["A"], cfg["block"])
    write_edge_list(out / "learned.edges", DenseAdjacency(ck["A"]))
    return 0


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "reconstruct": cmd_reconstruct}


def run(command: str, cfg: dict) -> int:
    if cfg.get("threads", 1) != 1:
        log.info("--threads %d accepted; results are computed single-threaded", cfg["threads"])
    write_manifest(command, cfg)
    return HANDLERS[command](cfg)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        if command == "replay":
            try:
                manifest = json.loads(Path(args["manifest"]).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise InputError(f"cannot read manifest: {exc}") from exc
            command, cfg = manifest["command"], manifest["config"]
            if "seeds" in cfg and cfg["seeds"] is not None:
                cfg["seeds"] = tuple(cfg["seeds"])
        else:
            cfg = resolve(command, args)
        return run(command, cfg)
    except UsageError as exc:
        print(f"deepnt: error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except InputError as exc:
        print(f"deepnt: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (learner.TrainingDiverged, nn.NumericError) as exc:
        print(f"deepnt: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
