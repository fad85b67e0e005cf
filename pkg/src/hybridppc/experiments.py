"""Seeded Monte Carlo experiments and their configuration files.

A configuration is a YAML mapping::

    experiment: se_vs_snr          # or ccdf, se_vs_bandwidth, gamma_vs_d,
                                   # gamma_vs_bandwidth
    system:
      preset: system_i             # default when no dimensions are given;
                                   # explicit fields override it
      n_subcarriers: 64
    channel:
      rician_factor_db: 0.0
    designs: [tpc, ppc_digital, ppc_hybrid]
    sweep: [-10, 0, 10]
    trials: 100
    master_seed: 0
    output_dir: results

Sweep values are SNR points in dB for ``se_vs_snr`` and ``ccdf``,
bandwidths in Hz for the bandwidth experiments and subspace dimensions for
``gamma_vs_d``. Every trial draws its channel from a seed derived from
``(master_seed, trial)``, so results do not depend on how trials are spread
over workers.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .channel import generate_channel
from .config import PRESETS, ChannelParams, SystemConfig, preset
from .digital import design_ppc_upper, design_tpc
from .hybrid import design_hybrid
from .metrics import ccdf_grid, empirical_ccdf, per_antenna_power, spectral_efficiency, \
    subspace_bases, subspace_quality

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "EXPERIMENTS",
    "DESIGNS",
    "parse_config",
    "load_config",
    "trial_seed",
    "run_trial",
    "run_experiment",
    "CSV_COLUMNS",
]

EXPERIMENTS = ("se_vs_snr", "ccdf", "se_vs_bandwidth", "gamma_vs_d", "gamma_vs_bandwidth")
DESIGNS = ("tpc", "ppc_digital", "ppc_hybrid")
CSV_COLUMNS = ("experiment", "design", "sweep_value", "trial", "seed", "rate_bits",
               "max_antenna_power", "gamma", "kkt_residual", "runtime_ms",
               "iterations", "feasible", "warning")
VIOLATION_TOL = 1e-8

_DEFAULT_SWEEPS = {
    "se_vs_snr": [-15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
    "ccdf": [0.0],
    "se_vs_bandwidth": [0.1e9, 0.5e9, 1e9, 2e9, 3e9],
    "gamma_vs_d": [1, 2, 3, 4, 5, 6, 7, 8],
    "gamma_vs_bandwidth": [0.1e9, 0.5e9, 1e9, 2e9, 3e9],
}
_TOP_KEYS = {"experiment", "system", "channel", "designs", "sweep", "trials",
             "master_seed", "output_dir"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    system: SystemConfig
    channel: ChannelParams
    designs: tuple = DESIGNS
    sweep: tuple = ()
    trials: int = 100
    master_seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: must be one of {list(EXPERIMENTS)}")
        if not isinstance(self.trials, (int, np.integer)) or self.trials < 1:
            raise ConfigError("trials: must be a positive integer")
        if len(self.sweep) == 0:
            raise ConfigError("sweep: must be nonempty")
        bad = [d for d in self.designs if d not in DESIGNS]
        if bad or not self.designs:
            raise ConfigError(f"designs: expected a nonempty subset of {list(DESIGNS)}")
        if self.experiment == "gamma_vs_d":
            limit = min(self.system.n_tx, self.system.n_rx)
            if any(int(d) != d or not 1 <= d <= limit for d in self.sweep):
                raise ConfigError(f"sweep: subspace dimensions must be integers in [1, {limit}]")
        if self.experiment.endswith("bandwidth") and any(not b > 0 for b in self.sweep):
            raise ConfigError("sweep: bandwidths must be positive")

    @property
    def channel_only(self):
        return self.experiment.startswith("gamma")

    def to_dict(self):
        chan = dataclasses.asdict(self.channel)
        chan["rays_per_cluster"] = list(chan["rays_per_cluster"])
        system = dataclasses.asdict(self.system)
        if system["budgets"] is not None:
            system["budgets"] = list(system["budgets"])
        return {
            "experiment": self.experiment,
            "system": system,
            "channel": chan,
            "designs": list(self.designs),
            "sweep": [float(v) for v in self.sweep],
            "trials": int(self.trials),
            "master_seed": int(self.master_seed),
            "output_dir": str(self.output_dir),
        }


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _key_lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers of a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}{key.value}"
            out[path] = key.start_mark.line + 1
            _key_lines(value, path + ".", out)
    return out


def _fail(msg, field_path, lines, source):
    line = lines.get(field_path)
    where = f"{source}:{line}: " if line else f"{source}: "
    raise ConfigError(f"{where}{field_path}: {msg}")


def _build_fields(cls, raw, section, lines, source):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            _fail(f"unknown key (expected one of {sorted(known)})",
                  f"{section}.{key}", lines, source)
    return dict(raw)


def load_config(data, source="<config>", lines=None):
    """Validate an already parsed mapping and return an :class:`ExperimentSpec`."""
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    for key in data:
        if key not in _TOP_KEYS:
            _fail(f"unknown key (expected one of {sorted(_TOP_KEYS)})", str(key), lines, source)
    if "experiment" not in data:
        _fail("is required", "experiment", lines, source)
    experiment = data["experiment"]
    if experiment not in EXPERIMENTS:
        _fail(f"must be one of {list(EXPERIMENTS)}, got {experiment!r}", "experiment", lines, source)

    sys_raw = dict(data.get("system") or {})
    if not isinstance(sys_raw, dict):
        _fail("must be a mapping", "system", lines, source)
    preset_name = sys_raw.pop("preset", None)
    sys_kwargs = _build_fields(SystemConfig, sys_raw, "system", lines, source)
    dims = ("n_tx", "n_rx", "l_tx", "l_rx")
    if preset_name is None:
        given = [d for d in dims if d in sys_kwargs]
        if not given:
            preset_name = "system_i"
        elif len(given) < len(dims):
            missing = ", ".join(d for d in dims if d not in sys_kwargs)
            _fail(f"missing {missing} (or name a preset)", "system", lines, source)
    if preset_name is None and "n_streams" not in sys_kwargs and {"l_tx", "l_rx"} <= set(sys_kwargs):
        sys_kwargs["n_streams"] = min(sys_kwargs["l_tx"], sys_kwargs["l_rx"])
    try:
        system = preset(preset_name, **sys_kwargs) if preset_name else SystemConfig(**sys_kwargs)
    except (TypeError, ValueError) as exc:
        _fail(str(exc), "system", lines, source)

    chan_raw = data.get("channel") or {}
    if not isinstance(chan_raw, dict):
        _fail("must be a mapping", "channel", lines, source)
    chan_kwargs = _build_fields(ChannelParams, chan_raw, "channel", lines, source)
    if isinstance(chan_kwargs.get("rician_factor_db"), str):
        try:
            chan_kwargs["rician_factor_db"] = float(chan_kwargs["rician_factor_db"])
        except ValueError:
            _fail("must be a number or +/-inf", "channel.rician_factor_db", lines, source)
    try:
        channel = ChannelParams(**chan_kwargs)
    except (TypeError, ValueError) as exc:
        _fail(str(exc), "channel", lines, source)

    if system.n_subcarriers < channel.n_taps:
        _fail(f"n_subcarriers={system.n_subcarriers} is below channel.n_taps={channel.n_taps}",
              "system.n_subcarriers", lines, source)

    sweep = data.get("sweep", _DEFAULT_SWEEPS[experiment])
    if isinstance(sweep, (int, float)):
        sweep = [sweep]
    try:
        sweep = tuple(float(v) for v in sweep)
    except (TypeError, ValueError):
        _fail("must be a list of numbers", "sweep", lines, source)
    designs = data.get("designs", list(DESIGNS))
    if isinstance(designs, str):
        designs = [designs]
    trials = data.get("trials", 1000 if experiment == "ccdf" else 100)
    seed = data.get("master_seed", 0)
    if not isinstance(seed, int):
        _fail("must be an integer", "master_seed", lines, source)
    try:
        return ExperimentSpec(experiment=experiment, system=system, channel=channel,
                              designs=tuple(designs), sweep=sweep, trials=trials,
                              master_seed=seed,
                              output_dir=str(data.get("output_dir", "results")))
    except ConfigError as exc:
        name = str(exc).split(":", 1)[0]
        _fail(str(exc).split(": ", 1)[-1], name, lines, source)


def parse_config(path) -> ExperimentSpec:
    """Read a YAML experiment file.

    Raises
    ------
    ConfigError
        Malformed YAML (with line and column) or an invalid field.
    OSError
        The file cannot be read.
    """
    path = Path(path)
    text = path.read_text()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: {exc.problem or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return load_config({} if data is None else data, str(path), _key_lines(node))


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

def trial_seed(master_seed, trial):
    """64-bit seed for one trial, independent of every other trial."""
    ss = np.random.SeedSequence([int(master_seed) % 2**64, int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def _channel_for(spec, sweep_value):
    params = spec.channel
    if spec.experiment.endswith("bandwidth"):
        # Bandwidth sweeps are about beam squint, so it is always on.
        params = params.replace(bandwidth_hz=float(sweep_value), beam_squint=True)
    return params


def _system_for(spec, sweep_value):
    if spec.experiment in ("se_vs_snr", "ccdf"):
        return spec.system.replace(snr_db=float(sweep_value))
    return spec.system


def _evaluate_design(name, h, cfg, cache):
    if name == "tpc":
        design = design_tpc(h, cfg)
    elif name == "ppc_digital":
        design = design_ppc_upper(h, cfg)
        cache["ppc_digital"] = design
    else:
        ref = cache.get("ppc_digital")
        if ref is None:
            ref = cache["ppc_digital"] = design_ppc_upper(h, cfg)
        design = design_hybrid(h, cfg, ref)
    return design


def run_trial(spec: ExperimentSpec, trial: int):
    """All records of one trial as ``(rows, antenna_powers)``.

    ``antenna_powers`` maps ``(sweep_index, design)`` to the per-antenna
    power vector and is used for the CCDF summary.
    """
    seed = trial_seed(spec.master_seed, trial)
    rows, powers = [], {}
    chan_cache = {}
    for si, value in enumerate(spec.sweep):
        params = _channel_for(spec, value)
        key = (params.bandwidth_hz, params.beam_squint)
        if key not in chan_cache:
            chan_cache[key] = generate_channel(spec.system, params, seed).freq
        h = chan_cache[key]
        cfg = _system_for(spec, value)
        base = dict(experiment=spec.experiment, sweep_value=float(value), trial=int(trial),
                    seed=seed)

        if spec.channel_only:
            t0 = time.perf_counter()
            if spec.experiment == "gamma_vs_d":
                d = int(value)
                u_s, u_t = subspace_bases(h, int(max(spec.sweep)))
                gamma = subspace_quality(h, u_s, u_t, d)
            else:
                u_s, u_t = subspace_bases(h, cfg.n_streams)
                gamma = subspace_quality(h, u_s, u_t)
            rows.append(dict(base, design="channel", rate_bits=math.nan,
                             max_antenna_power=math.nan, gamma=gamma, kkt_residual=math.nan,
                             runtime_ms=1e3 * (time.perf_counter() - t0), iterations=0,
                             feasible=True, warning=""))
            continue

        u_s, u_t = subspace_bases(h, cfg.n_streams)
        gamma = subspace_quality(h, u_s, u_t)
        cache = {}
        for name in spec.designs:
            t0 = time.perf_counter()
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                design = _evaluate_design(name, h, cfg, cache)
                rate = spectral_efficiency(h, design.precoders, design.combiners,
                                           cfg.snr, cfg.n_streams)
            elapsed = 1e3 * (time.perf_counter() - t0)
            ant = per_antenna_power(design.precoders, cfg.n_streams)
            powers[(si, name)] = ant
            alloc = design.allocation
            rows.append(dict(base, design=name, rate_bits=rate,
                             max_antenna_power=float(ant.max()), gamma=gamma,
                             kkt_residual=alloc.kkt_residual, runtime_ms=elapsed,
                             iterations=alloc.iterations, feasible=alloc.feasible,
                             warning=";".join(sorted({type(w.message).__name__ for w in caught}))))
    return rows, powers


def _run_trial_packed(args):
    return run_trial(*args)


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def _summarize(spec, rows, powers):
    budgets = spec.system.budget_vector
    summary = {"experiment": spec.experiment, "trials": spec.trials, "points": []}
    names = ["channel"] if spec.channel_only else list(spec.designs)
    grid = ccdf_grid(budgets) if spec.experiment == "ccdf" else None
    if grid is not None:
        summary["ccdf_grid"] = grid.tolist()
    for si, value in enumerate(spec.sweep):
        point = {"sweep_value": float(value), "designs": {}}
        for name in names:
            sel = [r for r in rows if r["design"] == name and r["sweep_value"] == float(value)]
            entry = {}
            key = "gamma" if spec.channel_only else "rate_bits"
            vals = np.array([r[key] for r in sel], dtype=float)
            entry[key] = {"mean": float(np.mean(vals)), "median": float(np.median(vals)),
                          "std": float(np.std(vals))}
            if not spec.channel_only:
                gam = np.array([r["gamma"] for r in sel])
                entry["gamma_mean"] = float(np.mean(gam))
                ants = np.array([powers[(r["trial"], si, name)] for r in sel])
                excess = ants - budgets[np.newaxis, :]
                entry["constraint_violations"] = int(
                    np.sum(np.any(excess > VIOLATION_TOL * budgets, axis=1)))
                entry["solver_warnings"] = int(sum(1 for r in sel if r["warning"]))
                if grid is not None:
                    entry["ccdf"] = empirical_ccdf(ants.ravel(), grid).tolist()
            point["designs"][name] = entry
        summary["points"].append(point)
    return summary


def run_experiment(spec: ExperimentSpec, workers=None, output_dir=None):
    """Run every trial and write ``records.csv``, ``summary.json`` and
    ``config.yaml`` to the output directory.

    Returns a dict of the written paths.

    Raises
    ------
    OSError
        The output directory cannot be created or written.
    """
    out = Path(output_dir if output_dir is not None else spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    workers = (os.cpu_count() or 1) if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")

    jobs = [(spec, t) for t in range(spec.trials)]
    if workers == 1:
        results = [_run_trial_packed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_packed, jobs))

    rows, powers = [], {}
    for trial, (trial_rows, trial_powers) in enumerate(results):
        rows.extend(trial_rows)
        for (si, name), vec in trial_powers.items():
            powers[(trial, si, name)] = vec
    order = {name: i for i, name in enumerate(("channel",) + DESIGNS)}
    rows.sort(key=lambda r: (r["sweep_value"], order[r["design"]], r["trial"]))

    paths = {"records": out / "records.csv", "summary": out / "summary.json",
             "config": out / "config.yaml"}
    with open(paths["records"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    with open(paths["summary"], "w") as fh:
        json.dump(_summarize(spec, rows, powers), fh, indent=2, sort_keys=True)
        fh.write("\n")
    resolved = spec.to_dict()
    resolved["output_dir"] = str(out)
    with open(paths["config"], "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=False)
    return paths


def list_presets():
    """Preset name and its fields, n_streams included."""
    return {name: preset(name).__dict__ for name in PRESETS}
