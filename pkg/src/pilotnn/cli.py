"""Command-line entry point: configuration, experiment dispatch and file output.

Configuration files are flat JSON objects with a ``schema_version`` field.
Any key can also be set with ``--param key=value`` (values parsed as JSON,
falling back to plain strings). Every experiment is a pure function of its
configuration and seed.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import codec, estimator, fading, gmi, mac
from ._validation import db_to_linear
from .spectrum import SHAPES, PsdModel

SCHEMA_VERSION = 1
SPEED_OF_LIGHT = 3.0e8
_UMASK = os.umask(0)
os.umask(_UMASK)


class ConfigError(ValueError):
    """Configuration problems, each message prefixed with its field path."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ------------------------------------------------------------ environments


@dataclass(frozen=True)
class Environment:
    """Propagation environment in SI units."""

    delay_spread: float
    speed: float
    carrier: float

    def __post_init__(self):
        for name in ("delay_spread", "speed", "carrier"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")


def lambda_from_env(env: Environment):
    """Normalized Doppler bandwidth and the largest unaliased pilot period.

    ``lambda_D = 5 * delay_spread * (speed / c) * carrier`` with
    ``c = 3e8 m/s``, and ``L* = floor(1 / (2 lambda_D))``.

    Raises
    ------
    ValueError
        If ``lambda_D >= 1/2``.
    """
    lam = 5.0 * env.delay_spread * (env.speed / SPEED_OF_LIGHT) * env.carrier
    if lam >= 0.5:
        raise ValueError(f"normalized Doppler bandwidth {lam} is not below 1/2")
    return lam, int(math.floor(1.0 / (2.0 * lam)))


def kmh(value: float) -> float:
    return value / 3.6


@dataclass(frozen=True)
class TableRow:
    """Printed environment ranges: delay spread, speed, bandwidth and ``L*``."""

    name: str
    delay_spread: tuple
    speed: float
    lambda_range: tuple
    period_range: tuple
    carrier: tuple = (800e6, 5e9)

    def corners(self):
        for tau in self.delay_spread:
            for fc in self.carrier:
                yield Environment(tau, self.speed, fc)


TABLE_ROWS = (
    TableRow("indoor", (10e-9, 100e-9), kmh(5), (2e-7, 1e-5), (5e4, 2.5e6)),
    TableRow("urban", (1e-6, 2e-6), kmh(5), (2e-5, 2e-4), (2.5e3, 2.5e4)),
    TableRow("urban", (1e-6, 2e-6), kmh(75), (2e-4, 4e-3), (125, 2.5e3)),
    TableRow("hilly", (3e-6, 10e-6), kmh(200), (2e-3, 5e-2), (10, 250)),
)


# ------------------------------------------------------------ configuration

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_db_list = {"type": "array", "items": _num, "minItems": 1}

PSD_FIELDS = {
    "bandwidth": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
    "shape": {"enum": list(SHAPES)},
    "grid_points": {"type": "integer", "minimum": 16},
}

EXPERIMENTS = {
    "scenario": ({
        "delay_spread_s": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "speed_kmh": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "carrier_hz": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }, {"delay_spread_s": None, "speed_kmh": None, "carrier_hz": None}),
    "interp-error": ({
        **PSD_FIELDS, "L": _pos_int, "n_t": _pos_int, "n_r": _pos_int, "T": _pos_int,
        "n": _pos_int, "snr_db": _db_list, "frames": _pos_int,
    }, {"bandwidth": 0.125, "shape": "rectangular", "grid_points": 2048, "L": 4, "n_t": 1,
        "n_r": 1, "T": 16, "n": 24, "snr_db": [20.0], "frames": 10000}),
    "prelog": ({
        **PSD_FIELDS, "variant": {"enum": list(gmi.VARIANTS)}, "L": _pos_int, "n_t": _pos_int,
        "n_r": _pos_int, "T": {"type": ["integer", "null"], "minimum": 1},
        "snr_db": _db_list, "mc": {"type": "integer", "minimum": 2},
        "K": {"type": "number", "minimum": 1}, "E_norm_sq": {"type": "number", "exclusiveMinimum": 0},
        "refine_theta": {"type": "boolean"},
    }, {"bandwidth": 0.125, "shape": "rectangular", "grid_points": 2048, "variant": "asymptotic",
        "L": 4, "n_t": 2, "n_r": 2, "T": None, "snr_db": [40.0, 50.0, 60.0, 70.0, 80.0],
        "mc": gmi.DEFAULT_MC, "K": 1.0, "E_norm_sq": 1.0, "refine_theta": False}),
    "decode-sim": ({
        **PSD_FIELDS, "L": _pos_int, "n_t": _pos_int, "n_r": _pos_int, "T": _pos_int,
        "n": {"type": "array", "items": _pos_int, "minItems": 1},
        "M": {"type": "array", "items": _pos_int, "minItems": 1},
        "snr_db": _db_list, "frames": _pos_int, "law": {"enum": list(codec.LAWS)},
    }, {"bandwidth": 0.125, "shape": "rectangular", "grid_points": 2048, "L": 3, "n_t": 1,
        "n_r": 1, "T": 16, "n": [32, 64], "M": [4, 16], "snr_db": [30.0], "frames": 500,
        "law": "gaussian"}),
    "mac-region": ({
        "n_t1": _pos_int, "n_t2": _pos_int, "n_r": _pos_int, "L_star": _pos_int,
        "beta_steps": _pos_int,
    }, {"n_t1": 1, "n_t2": 1, "n_r": 2, "L_star": 8, "beta_steps": 100}),
    "mac-verdict": ({
        "n_t1": _pos_int, "n_t2": _pos_int, "n_r": _pos_int, "L_star": _pos_int,
    }, {"n_t1": 2, "n_t2": 2, "n_r": 4, "L_star": 9}),
    "dump-fading": ({
        **PSD_FIELDS, "length": _pos_int, "n_r": _pos_int, "n_t": _pos_int,
        "method": {"enum": list(fading.METHODS)},
    }, {"bandwidth": 0.125, "shape": "rectangular", "grid_points": 2048, "length": 4096,
        "n_r": 1, "n_t": 1, "method": "auto"}),
}


@dataclass
class RunConfig:
    """A validated experiment request."""

    experiment: str
    params: dict
    seed: int = 0
    out: Path = field(default_factory=lambda: Path("."))
    threads: int = 1


def _schema(experiment: str) -> dict:
    fields, _ = EXPERIMENTS[experiment]
    return {
        "type": "object",
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "experiment": {"const": experiment},
            "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
            **fields,
        },
        "additionalProperties": False,
    }


def _path(error) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path)


def _cross_checks(experiment: str, p: dict):
    problems = []

    def attempt(where, fn):
        try:
            fn()
        except (ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")

    if "bandwidth" in p:
        attempt("$.bandwidth", lambda: PsdModel(p["bandwidth"], p["shape"], p["grid_points"]))
    if experiment == "interp-error":
        attempt("$.n", lambda: estimator.build_schedule(p["L"], p["n_t"], p["T"], p["n"]))
    elif experiment == "prelog":
        if p["L"] <= p["n_t"]:
            problems.append("$.L: must exceed n_t")
        if p["n_t"] != p["n_r"]:
            problems.append("$.n_r: the bounds are implemented for n_t == n_r")
        if p["variant"] != "finite_window":
            if p["L"] > math.floor(1 / (2 * p["bandwidth"]) + 1e-12):
                problems.append("$.L: exceeds the aliasing limit for this variant")
            if p["variant"] == "general_input" and p["E_norm_sq"] > p["n_t"]:
                problems.append("$.E_norm_sq: must not exceed n_t")
        if len(p["snr_db"]) >= 2 and (len(p["snr_db"]) < 4 or np.any(np.diff(p["snr_db"]) <= 0)
                                      or p["snr_db"][-1] - p["snr_db"][0] < 20):
            problems.append("$.snr_db: slope fit needs >= 4 increasing points over >= 20 dB")
    elif experiment == "decode-sim":
        if len(p["n"]) != len(p["M"]):
            problems.append("$.M: must have one entry per codeword length in n")
        for i, n in enumerate(p["n"]):
            attempt(f"$.n[{i}]", lambda n=n: estimator.build_schedule(p["L"], p["n_t"], p["T"], n))
    elif experiment in ("mac-region", "mac-verdict"):
        if experiment == "mac-region" and p["L_star"] < p["n_t1"] + p["n_t2"]:
            problems.append("$.L_star: must be at least n_t1 + n_t2")
    elif experiment == "scenario":
        given = [p[k] is not None for k in ("delay_spread_s", "speed_kmh", "carrier_hz")]
        if any(given) and not all(given):
            problems.append("$: set all of delay_spread_s, speed_kmh, carrier_hz or none")
        elif all(given):
            attempt("$", lambda: lambda_from_env(Environment(
                p["delay_spread_s"], kmh(p["speed_kmh"]), p["carrier_hz"])))
    return problems


def validate_config(experiment: str, raw: dict) -> dict:
    """Merge defaults, check the schema and every cross-field precondition.

    Returns
    -------
    dict
        Complete parameter set without the bookkeeping keys.

    Raises
    ------
    ConfigError
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError([f"$.experiment: unknown experiment {experiment!r}"])
    validator = jsonschema.Draft202012Validator(_schema(experiment))
    problems = [f"{_path(e)}: {e.message}"
                for e in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))]
    if problems:
        raise ConfigError(problems)
    params = dict(EXPERIMENTS[experiment][1])
    params.update({k: v for k, v in raw.items() if k not in ("schema_version", "experiment", "seed")})
    problems = _cross_checks(experiment, params)
    if problems:
        raise ConfigError(problems)
    return params


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(["$: configuration must be a JSON object"])
    return data


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# ------------------------------------------------------------ experiments


def _psd(p) -> PsdModel:
    return PsdModel(p["bandwidth"], p["shape"], p["grid_points"])


def _point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(index,)).generate_state(1, np.uint64)[0])


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_scenario(cfg: RunConfig):
    p = cfg.params
    buf = io.StringIO()
    buf.write("environment,delay_spread_s,speed_m_s,carrier_hz,lambda_d,L_star,"
              "table_lambda_low,table_lambda_high,table_L_low,table_L_high\n")
    if p["delay_spread_s"] is not None:
        env = Environment(p["delay_spread_s"], kmh(p["speed_kmh"]), p["carrier_hz"])
        lam, period = lambda_from_env(env)
        buf.write(f"custom,{env.delay_spread!r},{env.speed!r},{env.carrier!r},{lam!r},{period},,,,\n")
    else:
        for row in TABLE_ROWS:
            for env in row.corners():
                lam, period = lambda_from_env(env)
                buf.write(f"{row.name},{env.delay_spread!r},{env.speed!r},{env.carrier!r},"
                          f"{lam!r},{period},{row.lambda_range[0]!r},{row.lambda_range[1]!r},"
                          f"{row.period_range[0]!r},{row.period_range[1]!r}\n")
    return {"scenario.csv": buf.getvalue()}


def run_interp_error(cfg: RunConfig):
    p = cfg.params
    psd = _psd(p)
    sched = estimator.build_schedule(p["L"], p["n_t"], p["T"], p["n"])

    def point(item):
        i, snr_db = item
        snr = float(db_to_linear(snr_db))
        prof = estimator.analytic_profile(sched, psd, snr)
        seeds = np.random.SeedSequence(_point_seed(cfg.seed, i)).generate_state(2, np.uint64)
        fade = fading.synthesize(psd, sched.frame_length, (p["n_r"], p["n_t"]),
                                 int(seeds[0]), n_frames=p["frames"])
        x = codec.transmit_frame(np.zeros((p["n_t"], p["n"])), sched)
        y = codec.channel_apply(x, fade, snr, noise_seed=int(seeds[1]))
        w = estimator.solve_weights(sched, psd, snr)
        est = estimator.estimate_path(w, sched, y)
        stats = estimator.empirical_error_stats(est, fade.samples[..., sched.data_indices], sched)
        return prof.with_empirical(stats)

    profiles = _map(point, list(enumerate(p["snr_db"])), cfg.threads)
    out = io.StringIO()
    for i, prof in enumerate(profiles):
        buf = io.StringIO()
        prof.write_csv(buf)
        lines = buf.getvalue().splitlines(True)
        out.write("".join(lines if i == 0 else lines[1:]))
    return {"interp_error.csv": out.getvalue()}


def _gmi_point(p, psd, snr, seed):
    variant = p["variant"]
    if variant == "asymptotic":
        return gmi.gmi_lb_asymptotic(psd, p["L"], p["n_t"], snr, p["mc"], seed)
    if variant == "digamma":
        return gmi.gmi_lb_digamma(psd, p["L"], p["n_t"], snr)
    if variant == "general_input":
        return gmi.gmi_lb_general_input(psd, p["L"], p["n_t"], snr, p["K"], p["E_norm_sq"],
                                        p["mc"], seed)
    if p["T"] is None:
        prof = estimator.limit_profile(psd, p["L"], p["n_t"], snr)
    else:
        sched = estimator.build_schedule(p["L"], p["n_t"], p["T"], p["L"] - p["n_t"])
        prof = estimator.analytic_profile(sched, psd, snr, with_limit=False)
    return gmi.gmi_lb_finite_T(prof, snr, p["n_r"], p["mc"], seed, p["refine_theta"])


def run_prelog(cfg: RunConfig):
    p = cfg.params
    psd = _psd(p)
    # One seed for the whole grid: common random numbers across SNR.
    results = _map(lambda d: _gmi_point(p, psd, float(db_to_linear(d)), cfg.seed),
                   p["snr_db"], cfg.threads)
    buf = io.StringIO()
    gmi.write_gmi_csv(results, buf)
    files = {"prelog.csv": buf.getvalue()}
    if len(p["snr_db"]) >= 4:
        fit = gmi.prelog_fit(p["snr_db"], [r.value for r in results])
        summary = {"slope_nats_per_ln_snr": fit.slope, "intercept_nats": fit.intercept,
                   "rms_residual_nats": fit.residual,
                   "slope_bits_per_log2_snr": fit.slope,
                   "pilot_fraction_ceiling": min(p["n_t"], p["n_r"]) * (1 - p["n_t"] / p["L"])}
        files["prelog_fit.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    return files


def run_decode_sim(cfg: RunConfig):
    p = cfg.params
    psd = _psd(p)
    jobs = [(i, j, n, M, d) for i, (n, M) in enumerate(zip(p["n"], p["M"]))
            for j, d in enumerate(p["snr_db"])]

    def point(job):
        i, j, n, M, d = job
        sched = estimator.build_schedule(p["L"], p["n_t"], p["T"], n)
        res = codec.simulate_block_errors(psd, sched, p["n_r"], float(db_to_linear(d)), M,
                                          p["frames"], p["law"],
                                          seed=_point_seed(cfg.seed, 1000 * i + j))
        return codec.BlockErrorResult(float(d), res.n, res.M, res.frames, res.block_errors)

    buf = io.StringIO()
    codec.write_block_errors(_map(point, jobs, cfg.threads), buf)
    return {"decode_sim.csv": buf.getvalue()}


def run_mac_region(cfg: RunConfig):
    p = cfg.params
    args = (p["n_t1"], p["n_t2"], p["n_r"], p["L_star"])
    files = {}
    for name, region in (("jt_region.csv", mac.jt_region(*args)),
                         ("tdma_region.csv", mac.tdma_region(*args))):
        buf = io.StringIO()
        region.write_vertices(buf)
        files[name] = buf.getvalue()
    buf = io.StringIO()
    buf.write("beta,p1,p2,p1_float,p2_float\n")
    steps = p["beta_steps"]
    for k in range(steps + 1):
        beta = Fraction(k, steps)
        a, b = mac.tdma_point(*args, beta)
        buf.write(f"{beta},{a},{b},{float(a)!r},{float(b)!r}\n")
    files["tdma_sweep.csv"] = buf.getvalue()
    return files


def run_mac_verdict(cfg: RunConfig):
    p = cfg.params
    buf = io.StringIO()
    mac.write_verdict(mac.verdict_record(p["n_t1"], p["n_t2"], p["n_r"], p["L_star"]), buf)
    return {"mac_verdict.json": buf.getvalue()}


def run_dump_fading(cfg: RunConfig):
    p = cfg.params
    path = fading.synthesize(_psd(p), p["length"], (p["n_r"], p["n_t"]), cfg.seed,
                             method=p["method"])
    buf = io.BytesIO()
    fading.dump_fading(path, buf)
    return {"fading.bin": buf.getvalue()}


RUNNERS = {
    "scenario": run_scenario,
    "interp-error": run_interp_error,
    "prelog": run_prelog,
    "decode-sim": run_decode_sim,
    "mac-region": run_mac_region,
    "mac-verdict": run_mac_verdict,
    "dump-fading": run_dump_fading,
}


def _write_outputs(files: dict, out: Path) -> list:
    """Write every file atomically; on any failure remove what was written."""
    out.mkdir(parents=True, exist_ok=True)
    written, pending = [], None
    try:
        for name, content in files.items():
            target = out / name
            mode = "wb" if isinstance(content, bytes) else "w"
            fd, pending = tempfile.mkstemp(dir=out, prefix=f".{name}.")
            with os.fdopen(fd, mode) as fh:
                fh.write(content)
            os.chmod(pending, 0o666 & ~_UMASK)
            os.replace(pending, target)
            pending = None
            written.append(target)
    except Exception:
        for path in [*written, *([Path(pending)] if pending else [])]:
            path.unlink(missing_ok=True)
        raise
    return written


def run_experiment(config: RunConfig) -> list:
    """Run one experiment and write its artifacts; returns the written paths.

    Nothing is written unless the whole computation succeeds.
    """
    files = RUNNERS[config.experiment](config)
    return _write_outputs(files, Path(config.out))


COLUMN_HELP = {
    "scenario": "scenario.csv: environment, delay_spread_s, speed_m_s, carrier_hz, lambda_d, "
                "L_star, printed table ranges.",
    "interp-error": "interp_error.csv: ell, t, T, snr, analytic_eps2, empirical_eps2, se.",
    "prelog": "prelog.csv: variant, snr_db, L, n_t, n_r, T, value_nats, se, theta, value_bits; "
              "prelog_fit.json: slope in nats per ln SNR (equal to bits per log2 SNR).",
    "decode-sim": "decode_sim.csv: snr_db, n, M, frames, block_errors, ber_se.",
    "mac-region": "jt_region.csv and tdma_region.csv: vertex and constraint rows as exact "
                  "fractions plus floats; tdma_sweep.csv: beta, p1, p2.",
    "mac-verdict": "mac_verdict.json: n_t1, n_t2, n_r, L_star, jt_threshold, tdma_threshold, "
                   "verdict.",
    "dump-fading": "fading.bin: 32-byte header (magic, n_r, n_t, length, seed) then "
                   "little-endian complex64 samples in (r, t, k) order.",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pilotnn",
        description="Pilot-aided channel estimation and nearest-neighbor decoding experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in RUNNERS:
        defaults = ", ".join(f"{k}={json.dumps(v)}" for k, v in EXPERIMENTS[name][1].items())
        cmd = sub.add_parser(name, help=COLUMN_HELP[name].split(":")[0],
                             description=f"Output: {COLUMN_HELP[name]} Defaults: {defaults}.")
        cmd.add_argument("--config", type=Path, help="JSON configuration file")
        cmd.add_argument("--seed", type=int, help="root seed (overrides the config)")
        cmd.add_argument("--out", type=Path, default=Path("."), help="output directory")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads")
        cmd.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                         help="override one configuration key; VALUE is parsed as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        if raw.get("experiment", args.experiment) != args.experiment:
            raise ConfigError([f"$.experiment: config is for {raw['experiment']!r}"])
        raw.setdefault("schema_version", SCHEMA_VERSION)
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError([f"--param {item!r}: expected KEY=VALUE"])
            raw[key] = _parse_value(value)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError(["--threads: must be at least 1"])
        params = validate_config(args.experiment, raw)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    cfg = RunConfig(args.experiment, params, int(raw.get("seed", 0)), args.out, args.threads)
    for path in run_experiment(cfg):
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
