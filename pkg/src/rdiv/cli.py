"""Command-line experiment runner.

Every subcommand reads an optional JSON ``--config`` whose keys are the
long flag names (dashes or underscores); flags given on the command line
override the file.  Results are written as CSV into ``--out`` together with
a ``manifest.json`` run record.  Exit codes: 0 success, 1 runtime failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import scipy

from .data import SCENARIOS, DatasetPair, make_scenario
from .divergences import ESTIMATORS, estimate, make_statistic
from .errors import InvalidArgument, ReplicaError, TrainingDiverged
from .io import load_dataset, save_dataset, write_csv
from .models import FAMILIES, ModelSpec, hypothesis_from_bytes, hypothesis_to_bytes
from .noisy import CaseStudyConfig, CaseStudyReport, run_case_study
from .testing import PowerReport, test_power, type1_calibration

POWER_FIELDS = ("estimator", "scenario", "N", "d", "K", "Z", "alpha", "power", "std_err")
ESTIMATE_FIELDS = ("estimator", "value", "risk_p", "risk_q", "N", "d", "seed")
CURVE_FIELDS = ("x", "power", "std_err")


class ConfigError(Exception):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------- field converters


def _int(lo=None):
    def conv(v):
        if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
            raise ValueError(f"expected an integer, got {v!r}")
        out = int(v)
        if lo is not None and out < lo:
            raise ValueError(f"must be >= {lo}")
        return out

    return conv


def _float(lo=None, hi=None, open_interval=False):
    def conv(v):
        out = float(v)
        if not np.isfinite(out):
            raise ValueError("must be finite")
        if open_interval and not lo < out < hi:
            raise ValueError(f"must lie in ({lo}, {hi})")
        if not open_interval and lo is not None and out < lo:
            raise ValueError(f"must be >= {lo}")
        return out

    return conv


def _list(item):
    def conv(v):
        if isinstance(v, str):
            v = [s for s in v.split(",") if s.strip()]
        elif not isinstance(v, (list, tuple)):
            v = [v]
        if not v:
            raise ValueError("must not be empty")
        return tuple(item(x) for x in v)

    return conv


def _choice(options):
    def conv(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v

    return conv


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _opt(conv):
    return lambda v: None if v is None else conv(v)


FIELDS: Dict[str, Callable] = {
    "seed": _int(0),
    "out": str,
    "threads": _int(1),
    "scenario": _choice(SCENARIOS),
    "shift": _float(),
    "format": _choice(("csv", "bin")),
    "p": str,
    "q": str,
    "estimator": _choice(ESTIMATORS),
    "model": _choice(FAMILIES),
    "bandwidth": _opt(_float(0.0)),
    "mmd_bandwidth": _opt(_float(0.0)),
    "phi": _choice(("mean", "max")),
    "hidden": _list(_int(1)),
    "epochs": _int(1),
    "batch": _int(1),
    "lr": _opt(_float(0.0)),
    "optimizer": _choice(("adam", "sgd")),
    "loss_clip": _opt(_float(0.0)),
    "n": _list(_int(1)),
    "d": _list(_int(1)),
    "k": _int(1),
    "z": _int(2),
    "alpha": _float(0.0, 1.0, open_interval=True),
    "curve": _bool,
    "n_train": _int(1),
    "n_test": _int(1),
    "classes": _int(2),
    "dim": _int(1),
    "separation": _float(0.0),
    "noise_rate": _float(0.0),
    "noise_mode": _choice(("symmetry", "pair")),
    "gammas": _list(_float(0.0, 1.0, open_interval=True)),
    "save_pretrained": str,
    "load_pretrained": str,
}

_NOISY_DEFAULTS = CaseStudyConfig()

# per command: field -> default (REQUIRED marks a field without one)
REQUIRED = object()
_COMMON = {"seed": 0, "out": "rdiv-out", "threads": 1}
_MODEL = {"model": None, "bandwidth": None, "hidden": (64,), "epochs": 50, "batch": 128, "lr": None, "optimizer": "adam", "loss_clip": None}
COMMANDS: Dict[str, Dict[str, object]] = {
    "gen": {**_COMMON, "scenario": REQUIRED, "n": REQUIRED, "d": None, "shift": None, "format": "csv"},
    "estimate": {
        **_COMMON,
        **_MODEL,
        "p": None,
        "q": None,
        "scenario": None,
        "n": None,
        "d": None,
        "shift": None,
        "estimator": REQUIRED,
        "phi": "mean",
        "mmd_bandwidth": None,
    },
    "power": {
        **_COMMON,
        **_MODEL,
        "scenario": REQUIRED,
        "estimator": REQUIRED,
        "n": REQUIRED,
        "d": None,
        "shift": None,
        "k": REQUIRED,
        "z": REQUIRED,
        "alpha": REQUIRED,
        "seed": REQUIRED,
        "phi": "mean",
        "mmd_bandwidth": None,
        "curve": False,
    },
    "noisy": {
        **_COMMON,
        **_MODEL,
        "hidden": _NOISY_DEFAULTS.spec.hidden,
        "epochs": _NOISY_DEFAULTS.spec.epochs,
        "batch": _NOISY_DEFAULTS.spec.batch,
        "lr": _NOISY_DEFAULTS.spec.lr,
        "optimizer": _NOISY_DEFAULTS.spec.optimizer,
        "n_train": _NOISY_DEFAULTS.n_train,
        "n_test": _NOISY_DEFAULTS.n_test,
        "classes": _NOISY_DEFAULTS.classes,
        "dim": _NOISY_DEFAULTS.dim,
        "separation": _NOISY_DEFAULTS.separation,
        "noise_rate": _NOISY_DEFAULTS.noise_rate,
        "noise_mode": _NOISY_DEFAULTS.noise_mode,
        "gammas": _NOISY_DEFAULTS.gammas,
        "curve": False,
        "save_pretrained": None,
        "load_pretrained": None,
    },
}
COMMANDS["calibrate"] = {**COMMANDS["power"], "scenario": "normal-null"}

_HELP = {
    "seed": "master seed; all randomness derives from it",
    "out": "output directory",
    "threads": "worker threads for power trials",
    "n": "samples per set (comma list allowed for power sweeps)",
    "d": "dimension (comma list allowed for power sweeps)",
    "k": "number of trials K",
    "z": "permutation-set size Z, including the observed statistic",
    "curve": "power: also write curve.csv; noisy: write the per-epoch training curve",
    "hidden": "comma-separated hidden layer widths",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdiv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fields in COMMANDS.items():
        sp = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file of field values")
        for key in fields:
            flag = "--" + key.replace("_", "-")
            if FIELDS[key] is _bool:
                sp.add_argument(flag, dest=key, action="store_const", const=True, help=_HELP.get(key))
            else:
                sp.add_argument(flag, dest=key, help=_HELP.get(key))
    return parser


def resolve(command: str, flags: dict, config_path=None) -> dict:
    """Layer defaults, the JSON config and explicit flags; validate every field."""
    fields = COMMANDS[command]
    merged = {}
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
        for key, value in raw.items():
            norm = key.replace("-", "_")
            if norm == "command":
                if value != command:
                    raise ConfigError("command", f"config is for {value!r}, not {command!r}")
                continue
            if norm not in fields:
                raise ConfigError(key, f"unknown key for {command}")
            merged[norm] = value
    merged.update(flags)
    out = {}
    for key, default in fields.items():
        if key not in merged:
            if default is REQUIRED:
                raise ConfigError(key, "required field is missing")
            out[key] = default
            continue
        try:
            out[key] = FIELDS[key](merged[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from exc
    _cross_check(command, out)
    return out


def _cross_check(command, cfg):
    if command == "estimate":
        files = cfg["p"] is not None or cfg["q"] is not None
        if files and (cfg["p"] is None or cfg["q"] is None):
            raise ConfigError("p" if cfg["p"] is None else "q", "both --p and --q are needed")
        if not files and cfg["scenario"] is None:
            raise ConfigError("scenario", "give --p/--q files or a --scenario")
        if not files and cfg["n"] is None:
            raise ConfigError("n", "required with --scenario")
    for key in ("n", "d"):
        if command in ("gen", "estimate") and cfg.get(key) is not None and len(cfg[key]) > 1:
            raise ConfigError(key, f"{command} takes a single value")
    if command in ("power", "calibrate") and cfg["d"] is not None and len(cfg["n"]) > 1 and len(cfg["d"]) > 1:
        raise ConfigError("d", "sweep either n or d, not both")


def model_spec(cfg, estimator=None) -> ModelSpec:
    """``estimator=None`` means the noisy-label study, which needs a classifier."""
    classifier_only = estimator in ("c2st-s", "c2st-l", None)
    family = cfg["model"] or ("mlp_classifier" if classifier_only else "kde")
    if classifier_only and family != "mlp_classifier":
        raise ConfigError("model", f"{estimator or 'noisy'} needs mlp_classifier, got {family}")
    try:
        return ModelSpec(
            family,
            bandwidth=cfg["bandwidth"],
            hidden=cfg["hidden"],
            epochs=cfg["epochs"],
            batch=cfg["batch"],
            lr=cfg["lr"],
            optimizer=cfg["optimizer"],
            loss_clip=cfg["loss_clip"],
        )
    except InvalidArgument as exc:
        raise ConfigError("model", str(exc)) from exc


def _scenario(cfg, d):
    params = {} if cfg["shift"] is None else {"shift": cfg["shift"]}
    try:
        return make_scenario(cfg["scenario"], d, **params)
    except InvalidArgument as exc:
        raise ConfigError("d", str(exc)) from exc


def _single(v):
    return None if v is None else v[0]


# ---------------------------------------------------------------- outputs


def power_row(report: PowerReport) -> list:
    return [report.estimator, report.scenario, report.N, report.d, report.K, report.Z, report.alpha, report.power, report.std_err]


def emit_power_curve(points: Sequence[Tuple[float, PowerReport]], path) -> None:
    """Write ``x, power, std_err`` rows sorted by ascending ``x``."""
    if not points:
        raise InvalidArgument("no reports to write")
    names = {r.estimator for _, r in points}
    if len(names) > 1:
        raise InvalidArgument(f"curve mixes estimators: {', '.join(sorted(names))}")
    rows = sorted(points, key=lambda p: p[0])
    write_csv(path, CURVE_FIELDS, [[x, float(r.power), float(r.std_err)] for x, r in rows])


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "artifact": pkg}


def _jsonable(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}


@dataclass
class RunRecord:
    command: str
    config: dict
    outputs: List[str]
    wall_seconds: float

    def write(self, out_dir: Path):
        man = {
            "command": self.command,
            "config": _jsonable(self.config),
            "seed": self.config["seed"],
            "versions": _versions(),
            "outputs": self.outputs,
            "wall_seconds": self.wall_seconds,
        }
        (out_dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_gen(cfg, out: Path) -> List[str]:
    scenario = _scenario(cfg, _single(cfg["d"]))
    pair = scenario(cfg["n"][0], cfg["seed"])
    names = [f"p.{cfg['format']}", f"q.{cfg['format']}"]
    save_dataset(pair.p_hat, out / names[0])
    save_dataset(pair.q_hat, out / names[1])
    return names


def _load_pair(cfg) -> DatasetPair:
    p, q = load_dataset(cfg["p"]), load_dataset(cfg["q"])
    if p.has_labels or q.has_labels:
        classes = max(p.n_classes or 0, q.n_classes or 0)
        p, q = load_dataset(cfg["p"], classes), load_dataset(cfg["q"], classes)
    return DatasetPair(p, q)


def cmd_estimate(cfg, out: Path) -> List[str]:
    if cfg["p"] is not None:
        pair = _load_pair(cfg)
    else:
        pair = _scenario(cfg, _single(cfg["d"]))(cfg["n"][0], cfg["seed"])
    name = cfg["estimator"]
    spec = None if name == "mmd" else model_spec(cfg, name)
    est = estimate(pair, name, spec, cfg["seed"], cfg["phi"], cfg["mmd_bandwidth"])
    blank = lambda v: "" if v is None else float(v)
    row = [name, float(est.value), blank(est.risk_p), blank(est.risk_q), pair.n, pair.dim, cfg["seed"]]
    write_csv(out / "estimate.csv", ESTIMATE_FIELDS, [row])
    return ["estimate.csv"]


def _power_like(cfg, out: Path, calibrate: bool) -> List[str]:
    name = cfg["estimator"]
    spec = None if name == "mmd" else model_spec(cfg, name)
    stat = make_statistic(name, spec, cfg["phi"], cfg["mmd_bandwidth"])
    runner = type1_calibration if calibrate else test_power
    ds = cfg["d"] if cfg["d"] is not None else (None,)
    if calibrate:
        probe = _scenario(cfg, ds[0])
        if not probe.null:
            raise ConfigError("scenario", f"{probe.name} is not a null scenario")
    points = []
    for d in ds:
        scenario = _scenario(cfg, d)
        for n in cfg["n"]:
            report = runner(scenario, stat, n, cfg["k"], cfg["z"], cfg["alpha"], cfg["seed"], cfg["threads"])
            x = d if len(ds) > 1 else n
            points.append((x, report))
    fname = "calibrate.csv" if calibrate else "power.csv"
    write_csv(out / fname, POWER_FIELDS, [power_row(r) for _, r in points])
    outputs = [fname]
    if cfg["curve"]:
        emit_power_curve(points, out / "curve.csv")
        outputs.append("curve.csv")
    return outputs


def cmd_power(cfg, out):
    return _power_like(cfg, out, calibrate=False)


def cmd_calibrate(cfg, out):
    return _power_like(cfg, out, calibrate=True)


def cmd_noisy(cfg, out: Path) -> List[str]:
    spec = model_spec(cfg)
    study = CaseStudyConfig(
        n_train=cfg["n_train"],
        n_test=cfg["n_test"],
        classes=cfg["classes"],
        dim=cfg["dim"],
        separation=cfg["separation"],
        noise_rate=cfg["noise_rate"],
        noise_mode=cfg["noise_mode"],
        gammas=cfg["gammas"],
        spec=spec,
        seed=cfg["seed"],
    )
    pretrained = None
    if cfg["load_pretrained"] is not None:
        pretrained = hypothesis_from_bytes(Path(cfg["load_pretrained"]).read_bytes())
    result = run_case_study(study, pretrained)
    write_csv(out / "noisy.csv", CaseStudyReport.FIELDS, [r.row() for r in result.reports])
    outputs = ["noisy.csv"]
    if cfg["curve"]:
        rows = [[phase, "" if np.isnan(g) else g, epoch, float(loss)] for phase, g, epoch, loss in result.curves]
        write_csv(out / "curve.csv", ("phase", "gamma", "epoch", "loss"), rows)
        outputs.append("curve.csv")
    if cfg["save_pretrained"] is not None:
        Path(cfg["save_pretrained"]).write_bytes(hypothesis_to_bytes(result.pretrained))
    return outputs


HANDLERS = {"gen": cmd_gen, "estimate": cmd_estimate, "power": cmd_power, "calibrate": cmd_calibrate, "noisy": cmd_noisy}


def run(command: str, cfg: dict) -> RunRecord:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    outputs = HANDLERS[command](cfg, out)
    record = RunRecord(command, cfg, outputs, time.perf_counter() - start)
    record.write(out)
    return record


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        cfg = resolve(command, args, config_path)
        record = run(command, cfg)
    except ConfigError as exc:
        print(f"rdiv {command}: config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidArgument, TrainingDiverged, ReplicaError, OSError) as exc:
        print(f"rdiv {command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name in record.outputs:
        print(Path(cfg["out"]) / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
