"""
==============================================================================
Experiment Harness Module (harness.py)
==============================================================================
Description: Config-driven experiment runner writing trajectories, error
summaries, convergence orders and validation reports as CSV

Main Features:
    - load_configs: INI experiment files, one section per experiment
    - run: integrate every (method, h) pair, write trace/summary/order CSVs
      and a manifest
    - validate: polarization identities, lemma and symmetry checks
    - list_presets / read_preset: shipped experiment files

Environment Variables (.env):
    - LIEEP_OUTPUT_ROOT: overrides the output root of every experiment
    - LIEEP_PRESETS_PATH: directory of shipped presets (default: ./presets)

All floats are written with 17 significant digits. Output is deterministic
for a given config; wall-clock columns are the only exception and are
written as nan when ``timing = false``.
==============================================================================
"""

import ast
import configparser
import csv
import json
import logging
import math
import operator
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from diagnostics import align_reference, global_error, lemma_definiteness, observed_order, symmetry_residual
from errors import ConfigError, IntegrationError, LieepError, ParameterError
from integrators import Method, StructureClass, Trajectory, generate_starting_values, integrate
from polarization import VALIDATION_TOLERANCE, corrupt_gradient, validate_polarization
from problems import PROBLEMS, build

logger = logging.getLogger(__name__)

OUTPUT_ROOT = os.getenv("LIEEP_OUTPUT_ROOT")
PRESETS_PATH = os.getenv("LIEEP_PRESETS_PATH", os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets"))

CHANNELS = ("polarized_energy", "discrete_energy", "original_energy", "step_residual")
SUMMARY_FIELDS = [
    "method",
    "h",
    "status",
    "error_kind",
    "global_error",
    "wall_clock_total",
    "wall_clock_stepping",
    "fixed_point_iters_mean",
]
ORDER_FIELDS = ["method", "h", "global_error", "pairwise_slope", "fitted_slope"]
VALIDATION_FIELDS = ["check", "value", "tolerance", "status"]

LEMMA_TOLERANCE = 1e-11
SYMMETRY_TOLERANCE = 1e-10

PROBLEM_KEYS = {
    "wind": ("r", "theta", "a", "x0"),
    "fpu": ("N", "L", "beta", "gamma", "m", "eps", "alpha"),
    "pendulum": ("q0", "p0"),
}
# Keys that change U-bar only, never the flow
POLARIZATION_KEYS = {"a"}
RUN_KEYS = {
    "description",
    "problem",
    "methods",
    "h",
    "T",
    "channels",
    "seed",
    "output_dir",
    "output_root",
    "reference",
    "reference_refinement",
    "trace",
    "trace_every",
    "timing",
    "timing_repeats",
    "workers",
    "trials",
    "corrupt_gradient",
}


# ==============================================================================
# Config Parsing
# ==============================================================================

_NAMES = {"pi": math.pi, "e": math.e}
_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def parse_real(text: str) -> float:
    """
    Real number from a config value: literals, fractions and pi/e expressions.

    Examples: "0.05", "1/20", "pi/2 - 1e-4", "2**-5".

    Raises:
        ConfigError: anything else
    """
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"Cannot parse number '{text}'") from e

    def evaluate(node: ast.AST) -> float:
        if isinstance(node, ast.Expression):
            return evaluate(node.body)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](evaluate(node.operand))
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            return _BINARY[type(node.op)](evaluate(node.left), evaluate(node.right))
        raise ConfigError(f"Unsupported expression in '{text}'")

    try:
        value = float(evaluate(tree))
    except (ZeroDivisionError, OverflowError) as e:
        raise ConfigError(f"Cannot evaluate '{text}': {e}") from e
    if not math.isfinite(value):
        raise ConfigError(f"'{text}' is not finite")
    return value


def _split(text: str) -> List[str]:
    return [item.strip() for item in str(text).split(",") if item.strip()]


def _get_bool(section: configparser.SectionProxy, key: str, default: bool) -> bool:
    try:
        return section.getboolean(key, fallback=default)
    except ValueError as e:
        raise ConfigError(f"[{section.name}] {key}: {e}") from e


def _get_int(section: configparser.SectionProxy, key: str, default: int, minimum: int) -> int:
    if key not in section:
        return default
    value = parse_real(section[key])
    if value != int(value) or value < minimum:
        raise ConfigError(f"[{section.name}] {key} must be an integer >= {minimum}, got {section[key]}")
    return int(value)


@dataclass
class ExperimentConfig:
    """
    One experiment: a problem, its parameters, methods, step sizes and outputs.

    Attributes:
        name: section name, also the default output directory
        problem: wind, fpu or pendulum
        params: problem parameters (missing keys take the problem defaults)
        methods: subset of lieep, eavf, crk6
        hs: step sizes
        T: horizon
        channels: trajectory channels written to the traces
        seed: RNG seed (validator sampling only)
        output_dir: output directory, relative to the output root
        output_root: base directory; LIEEP_OUTPUT_ROOT overrides it
        reference: compute a CRK6 reference and global errors
        reference_refinement: reference step = min(hs) / reference_refinement
        trace: write trace_<method>_<h>.csv files
        trace_every: keep every k-th trace row
        timing: measure wall clock (median of timing_repeats runs)
        workers: parallel (method, h) jobs when timing is off
        trials: validator sample count
        corrupt_gradient: perturbation added to the polarized gradient in validate
    """

    name: str
    problem: str
    params: Dict[str, Any] = field(default_factory=dict)
    methods: List[str] = field(default_factory=lambda: ["lieep"])
    hs: List[float] = field(default_factory=list)
    T: float = 1.0
    channels: List[str] = field(default_factory=lambda: ["polarized_energy", "discrete_energy"])
    seed: int = 0
    output_dir: Optional[str] = None
    output_root: str = "."
    reference: bool = True
    reference_refinement: int = 16
    trace: bool = True
    trace_every: int = 1
    timing: bool = True
    timing_repeats: int = 3
    workers: int = 1
    trials: int = 1000
    corrupt_gradient: float = 0.0
    description: str = ""

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"[{self.name}] unknown problem '{self.problem}'")
        if not self.methods:
            raise ConfigError(f"[{self.name}] no methods given")
        for method in self.methods:
            if method not in {m.value for m in Method}:
                raise ConfigError(f"[{self.name}] unknown method '{method}'")
        if not self.hs:
            raise ConfigError(f"[{self.name}] empty step size list")
        if any(not h > 0 for h in self.hs):
            raise ConfigError(f"[{self.name}] step sizes must be positive, got {self.hs}")
        if not self.T > 0:
            raise ConfigError(f"[{self.name}] T must be positive, got {self.T}")
        unknown = [c for c in self.channels if c not in CHANNELS]
        if unknown:
            raise ConfigError(f"[{self.name}] unknown channels {unknown}")

    @property
    def directory(self) -> str:
        root = OUTPUT_ROOT or self.output_root
        return os.path.join(root, self.output_dir or self.name)

    @classmethod
    def from_section(cls, section: configparser.SectionProxy) -> "ExperimentConfig":
        """Build a config from one INI section (DEFAULT keys included)."""
        problem = section.get("problem", "").strip()
        if problem not in PROBLEMS:
            raise ConfigError(f"[{section.name}] problem must be one of {', '.join(PROBLEMS)}, got '{problem}'")
        allowed = RUN_KEYS | set(PROBLEM_KEYS[problem])
        unknown = sorted(set(section.keys()) - allowed)
        if unknown:
            raise ConfigError(f"[{section.name}] unknown keys: {', '.join(unknown)}")

        params: Dict[str, Any] = {}
        for key in PROBLEM_KEYS[problem]:
            if key not in section:
                continue
            if key == "x0":
                params[key] = [parse_real(v) for v in _split(section[key])]
            elif key == "N":
                params[key] = _get_int(section, key, 128, 3)
            else:
                params[key] = parse_real(section[key])

        if "T" not in section:
            raise ConfigError(f"[{section.name}] T is required")
        return cls(
            name=section.name,
            problem=problem,
            params=params,
            methods=_split(section.get("methods", "lieep")),
            hs=[parse_real(v) for v in _split(section.get("h", ""))],
            T=parse_real(section["T"]),
            channels=_split(section.get("channels", "polarized_energy, discrete_energy")),
            seed=_get_int(section, "seed", 0, 0),
            output_dir=section.get("output_dir"),
            output_root=section.get("output_root", "."),
            reference=_get_bool(section, "reference", True),
            reference_refinement=_get_int(section, "reference_refinement", 16, 1),
            trace=_get_bool(section, "trace", True),
            trace_every=_get_int(section, "trace_every", 1, 1),
            timing=_get_bool(section, "timing", True),
            timing_repeats=_get_int(section, "timing_repeats", 3, 1),
            workers=_get_int(section, "workers", 1, 1),
            trials=_get_int(section, "trials", 1000, 1),
            corrupt_gradient=parse_real(section.get("corrupt_gradient", "0")),
            description=section.get("description", ""),
        )


def load_configs(path: str, section: Optional[str] = None) -> List[ExperimentConfig]:
    """
    Read an experiment file.

    Args:
        path: INI file
        section: only this experiment (default: every section in file order)

    Raises:
        ConfigError: unreadable file, no sections, unknown section or bad values
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"Cannot read config '{path}': {e}") from e

    names = parser.sections()
    if section is not None:
        if section not in names:
            raise ConfigError(f"No experiment [{section}] in '{path}'")
        names = [section]
    if not names:
        raise ConfigError(f"'{path}' defines no experiments")
    return [ExperimentConfig.from_section(parser[name]) for name in names]


# ==============================================================================
# Output Helpers
# ==============================================================================

def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _h_label(h: float) -> str:
    return f"{h:.10g}"


def _write_csv(path: str, fieldnames: List[str], rows: List[Dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(row.get(key)) for key in fieldnames})


def _write_trace(path: str, traj: Trajectory, channels: List[str], every: int) -> None:
    dim = traj.states.shape[1] if traj.states.size else 0
    fieldnames = ["t"] + [f"y{i + 1}" for i in range(dim)] + [c for c in channels if c in traj.channels]
    last = len(traj.times) - 1
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(fieldnames)
        for n in range(len(traj.times)):
            if n % every and n != last:
                continue
            row = [traj.times[n], *traj.states[n]] + [traj.channels[c][n] for c in fieldnames[dim + 1 :]]
            writer.writerow([_fmt(float(v)) for v in row])


def _prepare_directory(directory: str) -> None:
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory '{directory}': {e}") from e
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"Output directory '{directory}' is not writable")


def _build(config: ExperimentConfig):
    try:
        return build(config.problem, config.params)
    except ParameterError as e:
        raise ConfigError(f"[{config.name}] {e}") from e


# ==============================================================================
# Run
# ==============================================================================

def _reference_key(config: ExperimentConfig) -> Tuple:
    flow = {k: v for k, v in config.params.items() if k not in POLARIZATION_KEYS}
    params = tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in flow.items()))
    return config.problem, params, config.T, min(config.hs), config.reference_refinement


def _reference(
    config: ExperimentConfig, system, y0: np.ndarray, references: Optional[Dict[Tuple, Trajectory]] = None
) -> Optional[Trajectory]:
    key = _reference_key(config)
    if references is not None and key in references:
        logger.info(f"[{config.name}] reusing the CRK6 reference of an earlier experiment")
        return references[key]
    h_ref = min(config.hs) / config.reference_refinement
    logger.info(f"[{config.name}] CRK6 reference at h={h_ref:.6g} over T={config.T:g}")
    ref = integrate(
        "crk6", system, None, y0, h_ref, config.T, channels=(), record_every=config.reference_refinement
    )
    if not ref.ok:
        logger.warning(f"[{config.name}] reference failed: {ref.metadata['error']}")
        return None
    if references is not None:
        references[key] = ref
    return ref


def _run_job(
    config: ExperimentConfig, system, P, y0: np.ndarray, method: str, h: float, ref: Optional[Trajectory]
) -> Tuple[Dict[str, Any], Optional[str]]:
    repeats = config.timing_repeats if config.timing else 1
    runs = [integrate(method, system, P, y0, h, config.T, channels=config.channels) for _ in range(repeats)]
    traj = runs[-1]
    meta = traj.metadata

    row: Dict[str, Any] = {
        "method": method,
        "h": float(h),
        "status": meta["status"],
        "error_kind": meta["error"]["kind"] if meta["error"] else "",
        "global_error": math.nan,
        "wall_clock_total": math.nan,
        "wall_clock_stepping": math.nan,
        "fixed_point_iters_mean": meta["fixed_point_iters_mean"],
    }
    if config.timing:
        row["wall_clock_total"] = statistics.median(r.metadata["wall_clock_total"] for r in runs)
        row["wall_clock_stepping"] = statistics.median(r.metadata["wall_clock_stepping"] for r in runs)

    if traj.ok and ref is not None:
        try:
            row["global_error"] = global_error(traj, align_reference(ref, traj))
        except LieepError as e:
            logger.warning(f"[{config.name}] {method} h={h:.6g}: {e}")
            row["status"], row["error_kind"] = "error", e.kind

    trace_file = None
    if config.trace:
        trace_file = f"trace_{method}_{_h_label(h)}.csv"
        _write_trace(os.path.join(config.directory, trace_file), traj, config.channels, config.trace_every)
    logger.info(f"[{config.name}] {method} h={h:.6g}: status={row['status']}, error={row['global_error']:.3e}")
    return row, trace_file


def _order_rows(rows: List[Dict[str, Any]], methods: List[str]) -> List[Dict[str, Any]]:
    order: List[Dict[str, Any]] = []
    for method in methods:
        usable = sorted(
            (r for r in rows if r["method"] == method and r["status"] == "success"
             and math.isfinite(r["global_error"]) and r["global_error"] > 0),
            key=lambda r: -r["h"],
        )
        if len(usable) < 2:
            logger.warning(f"{method}: fewer than 2 usable errors, no order estimate")
            continue
        estimate = observed_order([r["h"] for r in usable], [r["global_error"] for r in usable])
        for i, r in enumerate(usable):
            order.append(
                {
                    "method": method,
                    "h": r["h"],
                    "global_error": r["global_error"],
                    "pairwise_slope": estimate.pairwise[i - 1] if i else math.nan,
                    "fitted_slope": estimate.slope,
                }
            )
    return order


def run(config: ExperimentConfig, references: Optional[Dict[Tuple, Trajectory]] = None) -> Dict[str, Any]:
    """
    Run one experiment and write its files.

    Writes trace_<method>_<h>.csv (if trace), summary.csv, order.csv (when a
    reference is computed) and manifest.json into config.directory. Timed runs
    execute sequentially; otherwise up to ``workers`` (method, h) jobs run in
    parallel.

    Args:
        config: the experiment
        references: CRK6 references shared across experiments; filled and
            reused when given. Experiments that differ only in
            POLARIZATION_KEYS integrate the same flow and share one entry.

    Returns:
        Dict: the manifest
            - experiment, problem, directory
            - files: emitted file names
            - status: "success", or "error" if any row failed
            - failures: number of failed rows

    Raises:
        ConfigError: invalid problem parameters or unwritable output directory
    """
    system, P, y0 = _build(config)
    directory = config.directory
    _prepare_directory(directory)
    logger.info(f"[{config.name}] {config.problem}: methods={config.methods}, h={config.hs}, T={config.T:g}")

    ref = _reference(config, system, y0, references) if config.reference else None
    jobs = [(method, h) for method in config.methods for h in config.hs]
    workers = 1 if config.timing else min(config.workers, len(jobs))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_job, config, system, P, y0, m, h, ref) for m, h in jobs]
            results = [future.result() for future in futures]
    else:
        results = [_run_job(config, system, P, y0, m, h, ref) for m, h in jobs]

    rows = [row for row, _ in results]
    files = [name for _, name in results if name]

    _write_csv(os.path.join(directory, "summary.csv"), SUMMARY_FIELDS, rows)
    files.append("summary.csv")
    if config.reference:
        _write_csv(os.path.join(directory, "order.csv"), ORDER_FIELDS, _order_rows(rows, config.methods))
        files.append("order.csv")

    failures = sum(1 for row in rows if row["status"] != "success")
    if config.reference and ref is None:
        failures += 1
    manifest = {
        "experiment": config.name,
        "problem": config.problem,
        "directory": directory,
        "files": sorted(files) + ["manifest.json"],
        "status": "error" if failures else "success",
        "failures": failures,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    logger.info(f"[{config.name}] wrote {len(manifest['files'])} files to {directory}")
    return manifest


# ==============================================================================
# Validate
# ==============================================================================

def _check(name: str, value: float, tolerance: float) -> Dict[str, Any]:
    return {"check": name, "value": value, "tolerance": tolerance, "status": "PASS" if value <= tolerance else "FAIL"}


def validate(config: ExperimentConfig) -> Dict[str, Any]:
    """
    Validate the configured problem and write validation.csv.

    Rows: every polarization identity (scaled residual), the lemma
    definiteness measure for the problem's (J, M) at p*h with h = hs[0], and
    the symmetry residual from a CRK6 starting window.

    Returns:
        Dict:
            - status: "pass" or "fail"
            - rows: the written rows
            - file: path of validation.csv
    """
    system, P, y0 = _build(config)
    directory = config.directory
    _prepare_directory(directory)
    if config.corrupt_gradient:
        logger.warning(f"[{config.name}] gradient corrupted by {config.corrupt_gradient:g}")
        P = corrupt_gradient(P, config.corrupt_gradient)

    rows: List[Dict[str, Any]] = []
    report = validate_polarization(P, system.U, system.gradU, trials=config.trials, seed=config.seed)
    for check, value in report.scaled.items():
        rows.append(_check(f"polarization_{check}", value, report.tolerance))

    h = config.hs[0]
    lemma = lemma_definiteness(system.J, system.M, P.window, h)
    if system.j_class is StructureClass.SKEW_SYMMETRIC:
        rows.append(_check("lemma_norm_B", lemma["norm_B"], LEMMA_TOLERANCE))
    else:
        rows.append(_check("lemma_max_eig_sym_B", lemma["max_eig_sym_B"], LEMMA_TOLERANCE))

    try:
        window = generate_starting_values(system, P, y0, h, P.window)
        residual = symmetry_residual(system, P, window, h)
        tolerance = SYMMETRY_TOLERANCE * (1.0 + float(np.max(np.abs(window[0]))))
        rows.append(_check("symmetry_residual", residual, tolerance))
    except IntegrationError as e:
        logger.warning(f"[{config.name}] symmetry check failed: {e}")
        rows.append({"check": "symmetry_residual", "value": math.nan, "tolerance": SYMMETRY_TOLERANCE,
                     "status": "FAIL"})

    path = os.path.join(directory, "validation.csv")
    _write_csv(path, VALIDATION_FIELDS, rows)
    status = "pass" if all(r["status"] == "PASS" for r in rows) else "fail"
    logger.info(f"[{config.name}] validation {status}: {sum(r['status'] == 'FAIL' for r in rows)} failing rows")
    return {"status": status, "rows": rows, "file": path}


# ==============================================================================
# Presets
# ==============================================================================

def list_presets() -> List[Dict[str, str]]:
    """Shipped presets as [{"name", "description"}], sorted by name."""
    if not os.path.isdir(PRESETS_PATH):
        logger.warning(f"Presets directory not found: {PRESETS_PATH}")
        return []
    presets = []
    for filename in sorted(os.listdir(PRESETS_PATH)):
        if not filename.endswith(".ini"):
            continue
        parser = configparser.ConfigParser()
        parser.read(os.path.join(PRESETS_PATH, filename), encoding="utf-8")
        description = parser.defaults().get("description", "")
        presets.append({"name": filename[: -len(".ini")], "description": description})
    return presets


def preset_path(name: str) -> str:
    """
    Raises:
        ConfigError: unknown preset
    """
    path = os.path.join(PRESETS_PATH, f"{name}.ini")
    if not os.path.isfile(path):
        raise ConfigError(f"Unknown preset '{name}'")
    return path


def read_preset(name: str) -> str:
    with open(preset_path(name), encoding="utf-8") as f:
        return f.read()
