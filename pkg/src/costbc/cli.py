"""Command line front end: ``costbc {ber,outage,verify,whiteness,lemma1}``.

Experiments can be given entirely by flags or by a YAML file (``--config``)
whose keys mirror :class:`ExperimentSpec`; flags override file values.
Results go to CSV (``--out`` or stdout), preceded by ``#`` comment lines that
record the tool version, the resolved configuration, the seed and the worker
count.  A short human-readable summary goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .analysis import (
    BerCurve,
    OutageCurve,
    WhitenessReport,
    ber_sweep,
    default_workers,
    fit_diversity,
    fit_slope,
    lemma1_check,
    outage_sweep,
    whiteness_report,
)
from .network import NetworkConfig, build_config, preset

COMMANDS = ("ber", "outage", "verify", "whiteness", "lemma1")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    """Invalid experiment description; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentSpec:
    command: str
    preset: str | None = "2hop_2x2x1"
    network: dict | None = None
    allocation: tuple[float, ...] | None = None
    e_db: tuple[float, ...] = ()
    snr_db: tuple[float, ...] = ()
    r: float = 0.0
    rate_offset: float = 1.0
    seed: int = 1
    workers: int = 1
    min_errors: int = 200
    max_frames: int = 1_000_000
    trials: int | None = None
    m1: int = 2
    m2: int = 2
    e1: float = 50.0
    gamma: float = 100.0
    out: str | None = None
    defaulted: tuple[str, ...] = ()
    config: NetworkConfig | None = field(default=None, repr=False, compare=False)

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("config")
        d.pop("defaulted")
        if self.config is not None:
            d["network_resolved"] = self.config.describe()
        return d


# ---------------------------------------------------------------------------
# parsing and validation


def parse_range(text, key: str = "range") -> tuple[float, ...]:
    """``"lo:hi:step"`` (inclusive of ``hi``), a single number, or a list."""
    if isinstance(text, (list, tuple)):
        try:
            return tuple(float(v) for v in text)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a list of numbers, got {text!r}") from None
    if isinstance(text, (int, float)):
        return (float(text),)
    parts = str(text).split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(key, f"expected lo:hi:step, got {text!r}") from None
    if len(nums) == 1:
        return (nums[0],)
    if len(nums) != 3:
        raise ConfigError(key, f"expected lo:hi:step, got {text!r}")
    lo, hi, step = nums
    if step <= 0 or hi < lo:
        raise ConfigError(key, f"need step > 0 and hi >= lo, got {text!r}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + i * step, 12) for i in range(count))


_INT_KEYS = ("seed", "workers", "min_errors", "max_frames", "trials", "m1", "m2")
_FLOAT_KEYS = ("r", "rate_offset", "e1", "gamma")
_KNOWN = {
    "command", "preset", "network", "allocation", "e_db", "snr_db", "out",
    *_INT_KEYS, *_FLOAT_KEYS,
}
_NETWORK_KEYS = {"name", "antennas", "source_design", "dispersion_sets", "constellation"}


def _as_int(key, value, minimum=None):
    if isinstance(value, bool):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {value!r}") from None
    if v != float(value):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(key, f"must be at least {minimum}, got {v}")
    return v


def _as_float(key, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _allocation(value):
    if value is None or value == "equal":
        return None
    if isinstance(value, str):
        value = value.split(",")
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError("allocation", f"expected 'equal' or a list of fractions, got {value!r}") from None


def _network_config(spec: ExperimentSpec) -> NetworkConfig:
    try:
        if spec.network is not None:
            net = dict(spec.network)
            unknown = set(net) - _NETWORK_KEYS
            if unknown:
                raise ConfigError(f"network.{sorted(unknown)[0]}", "unknown key")
            for key in ("antennas", "source_design", "dispersion_sets"):
                if key not in net:
                    raise ConfigError(f"network.{key}", "missing")
            return build_config(
                net.get("name", "custom"), net["antennas"], net["source_design"],
                net["dispersion_sets"], net.get("constellation", "qam4"),
                fractions=spec.allocation,
            )
        return preset(spec.preset, fractions=spec.allocation)
    except ConfigError:
        raise
    except KeyError as exc:
        key = "network" if spec.network is not None else "preset"
        raise ConfigError(key, str(exc.args[0]) if exc.args else "unknown name") from None
    except ValueError as exc:
        msg = str(exc)
        key = "allocation" if ("allocation" in msg or "power" in msg) else (
            "network" if spec.network is not None else "preset")
        raise ConfigError(key, msg) from None


def spec_from_mapping(data: dict) -> ExperimentSpec:
    """Validate a plain mapping (from YAML or flags) into an :class:`ExperimentSpec`."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping of keys to values")
    data = {k: v for k, v in data.items() if v is not None}
    for key in data:
        if key not in _KNOWN:
            raise ConfigError(key, "unknown key")
    if "command" not in data:
        raise ConfigError("command", f"missing; one of {', '.join(COMMANDS)}")
    if data["command"] not in COMMANDS:
        raise ConfigError("command", f"unknown command {data['command']!r}; one of {', '.join(COMMANDS)}")
    defaulted = [k for k in ("seed", "workers") if k not in data]
    kw = {"command": data["command"]}
    if "network" in data:
        if not isinstance(data["network"], dict):
            raise ConfigError("network", "expected a mapping")
        kw["network"] = data["network"]
        kw["preset"] = None
    if "preset" in data:
        if "network" in data:
            raise ConfigError("preset", "give either preset or network, not both")
        kw["preset"] = str(data["preset"])
    if "allocation" in data:
        kw["allocation"] = _allocation(data["allocation"])
    for key in ("e_db", "snr_db"):
        if key in data:
            kw[key] = parse_range(data[key], key)
    for key in _INT_KEYS:
        if key in data:
            kw[key] = _as_int(key, data[key], minimum=0 if key == "seed" else 1)
    for key in _FLOAT_KEYS:
        if key in data:
            kw[key] = _as_float(key, data[key])
    if "out" in data:
        kw["out"] = str(data["out"])
    kw.setdefault("workers", default_workers())
    spec = ExperimentSpec(**kw, defaulted=tuple(defaulted))
    if spec.command == "ber" and not spec.e_db:
        spec.e_db = parse_range("20:35:2.5")
        spec.defaulted += ("e_db",)
    if spec.command == "outage":
        if not spec.snr_db:
            spec.snr_db = parse_range("15:30:2.5")
            spec.defaulted += ("snr_db",)
        if not 0 <= spec.r < 1:
            raise ConfigError("r", f"multiplexing gain must lie in [0, 1), got {spec.r}")
    if spec.command in ("ber", "outage", "whiteness"):
        spec.config = _network_config(spec)
    if spec.command == "lemma1" and (spec.e1 <= 0 or spec.gamma <= 0):
        raise ConfigError("gamma" if spec.gamma <= 0 else "e1", "must be positive")
    return spec


def load_config(path) -> ExperimentSpec:
    """Read and validate a YAML experiment file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"parse error in {path}: {exc}") from None
    return spec_from_mapping(data if data is not None else {})


# ---------------------------------------------------------------------------
# output


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def header_lines(spec: ExperimentSpec) -> list[str]:
    seed_note = " (default)" if "seed" in spec.defaulted else ""
    workers_note = " (default)" if "workers" in spec.defaulted else ""
    return [
        f"# costbc {__version__}",
        f"# command: {spec.command}",
        f"# config: {json.dumps(spec.resolved(), sort_keys=True)}",
        f"# seed: {spec.seed}{seed_note}",
        f"# workers: {spec.workers}{workers_note}",
    ]


def ber_rows(curve: BerCurve) -> list[str]:
    rows = ["e_db,trials,bit_errors,ber,ci_lo,ci_hi"]
    for p in curve.points:
        lo, hi = p.ci95
        rows.append(",".join([fmt(p.e_db), fmt(p.trials), fmt(p.bit_errors), fmt(p.ber), fmt(lo), fmt(hi)]))
    return rows


def outage_rows(curve: OutageCurve) -> list[str]:
    rows = ["snr_db,trials,outages,p_out"]
    for p in curve.points:
        rows.append(",".join([fmt(p.snr_db), fmt(p.trials), fmt(p.outages), fmt(p.p_out)]))
    return rows


def whiteness_rows(report: WhitenessReport) -> list[str]:
    rows = ["node,i,j,cov_re,cov_im,z"]
    for e in report.entries:
        F = e.covariance.shape[0]
        for i in range(F):
            for j in range(F):
                c = e.covariance[i, j]
                z = "" if i == j else fmt(e.z_scores[i, j])
                rows.append(",".join([e.label, str(i), str(j), fmt(c.real), fmt(c.imag), z]))
    return rows


def check_rows(checks) -> list[str]:
    rows = ["check,passed,detail"]
    for name, ok, detail in checks:
        rows.append(f"{name},{int(ok)},{detail}")
    return rows


def _emit(spec: ExperimentSpec, rows: list[str]) -> None:
    text = "\n".join(header_lines(spec) + rows) + "\n"
    if spec.out is None:
        sys.stdout.write(text)
        return
    with open(spec.out, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# verify suite


def verify_checks(seed: int = 1, whiteness_trials: int = 100_000, ml_frames: int = 10_000):
    """Structural checks run by ``costbc verify``: ``[(name, passed, detail)]``."""
    from .detection import joint_ml_batch, detect_symbols
    from .network import draw_batch, run_frame, simulate_batch
    from .numerics import PURPOSE_GENERIC, RngStream, cn
    from .ostbc import DESIGNS, orthogonality_error
    from .relay import DISPERSION_SETS, validate_dispersion

    checks = []
    rng = RngStream(seed, 0, PURPOSE_GENERIC).generator()
    for name, make in DESIGNS.items():
        d = make()
        worst = max(orthogonality_error(d, cn(rng, d.L)) for _ in range(10_000))
        checks.append((f"orthogonality/{name}", worst <= 1e-12, f"max_err={worst:.3g}"))
    for name, make in DISPERSION_SETS.items():
        rep = validate_dispersion(make())
        worst = max(c.max_violation for c in rep.checks)
        checks.append((f"dispersion/{name}", rep.passed, f"max_violation={worst:.3g}"))
        out = make().outgoing_design
        worst = max(orthogonality_error(out, cn(rng, out.L)) for _ in range(1000))
        checks.append((f"relay_codeword/{name}", worst <= 1e-10, f"max_err={worst:.3g}"))

    for name in ("2hop_2x2x1", "2hop_2x2x2", "2hop_4x4x1", "2hop_4x4x2", "2hop_4x2x1", "2hop_4x2x2",
                 "3hop_2x2x2x1", "3hop_2x2x2x2"):
        cfg = preset(name, E=100.0, noise_var=0.0)
        inputs = draw_batch(cfg, 500, RngStream(seed, 1, PURPOSE_GENERIC))
        res = simulate_batch(cfg, inputs)
        index, _ = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation)
        errors = int(np.count_nonzero(cfg.constellation.indices_to_bits(index) != inputs.bits))
        checks.append((f"noiseless/{name}", errors == 0, f"bit_errors={errors}"))

    for name in ("2hop_2x2x1", "3hop_2x2x2x1"):
        rep = whiteness_report(preset(name), whiteness_trials, seed)
        checks.append((f"whiteness/{name}", rep.passed(4.0), f"max_z={rep.max_abs_z():.3g}"))

    for m1, m2 in ((2, 1), (2, 2), (4, 2)):
        rep = lemma1_check(m1, m2, 50.0, 100.0, 10_000, seed)
        checks.append((f"lemma1/{m1}x{m2}", rep.passed, f"max_rel={rep.max_relative_violation:.3g}"))

    cfg = preset("2hop_2x2x1", E=10.0)
    inputs = draw_batch(cfg, ml_frames, RngStream(seed, 2, PURPOSE_GENERIC))
    res = simulate_batch(cfg, inputs)
    ps, ps_margin = detect_symbols(res.dest_values, res.dest_gain, res.dest_noise_var, cfg.constellation)
    ml, ml_margin = joint_ml_batch(cfg, inputs, res)
    L = cfg.stage_design(cfg.N - 1).L
    tie = (ps_margin < 1e-9) | (np.repeat(ml_margin, L, axis=1) < 1e-9)
    disagree = int(np.count_nonzero((ps != ml) & ~tie))
    checks.append(("oracle/per_symbol_vs_ml", disagree == 0, f"disagreements={disagree}"))

    worst = 0.0
    for name in ("2hop_2x2x2", "2hop_4x2x1", "3hop_2x2x2x1"):
        cfg = preset(name)
        inputs = draw_batch(cfg, 20, RngStream(seed, 3, PURPOSE_GENERIC))
        res = simulate_batch(cfg, inputs)
        for i in range(inputs.size):
            real, frame = inputs.frame(i)
            tr = run_frame(cfg, real, frame)
            vals = np.stack([d.values for d in tr.destination])
            worst = max(worst, float(np.max(np.abs(vals - res.dest_values[i]))))
    checks.append(("oracle/batch_vs_reference", worst <= 1e-9, f"max_diff={worst:.3g}"))
    return checks


# ---------------------------------------------------------------------------
# running


def run(spec: ExperimentSpec) -> int:
    """Execute ``spec``; returns the process exit status."""
    t0 = time.perf_counter()
    log = sys.stderr
    status = EXIT_OK
    if spec.command == "ber":
        curve = ber_sweep(spec.config, spec.e_db, spec.min_errors, spec.max_frames, spec.seed, spec.workers)
        rows = ber_rows(curve)
        summary = [f"{p.e_db:g} dB: {p.bit_errors} errors / {p.trials} frames, BER {p.ber:.3e}"
                   + (" (under-resolved)" if p.under_resolved else "") for p in curve.points]
        try:
            fit = fit_diversity(curve, min_errors=max(100, min(spec.min_errors, 200)))
            summary.append(f"diversity slope {fit.slope:.3f} over {list(fit.used_db)}")
        except ValueError as exc:
            summary.append(f"no slope fit: {exc}")
    elif spec.command == "outage":
        trials = spec.trials or 10_000_000
        curve = outage_sweep(spec.config, spec.snr_db, spec.r, trials, spec.seed, spec.rate_offset, spec.workers)
        rows = outage_rows(curve)
        summary = [f"{p.snr_db:g} dB: {p.outages} / {p.trials}" for p in curve.points]
        try:
            fit = fit_slope(curve.snr_db, curve.p_out, curve.outages, None, 100)
            summary.append(f"outage slope {fit.slope:.3f} over {list(fit.used_db)}")
        except ValueError as exc:
            summary.append(f"no slope fit: {exc}")
    elif spec.command == "whiteness":
        rep = whiteness_report(spec.config, spec.trials or 100_000, spec.seed)
        rows = whiteness_rows(rep)
        summary = [f"{e.label}: max |z| {e.max_abs_z:.2f}" for e in rep.entries]
        if not rep.passed(4.0):
            status = EXIT_VERIFY_FAILED
    elif spec.command == "lemma1":
        rep = lemma1_check(spec.m1, spec.m2, spec.e1, spec.gamma, spec.trials or 10_000, spec.seed)
        rows = ["m1,m2,trials,violations,max_relative_violation",
                f"{spec.m1},{spec.m2},{rep.trials},{rep.violations},{fmt(rep.max_relative_violation)}"]
        summary = [f"{rep.violations} violations in {rep.trials} trials"]
        if not rep.passed:
            status = EXIT_VERIFY_FAILED
    else:
        checks = verify_checks(spec.seed)
        rows = check_rows(checks)
        width = max(len(c[0]) for c in checks)
        summary = [f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}" for name, ok, detail in checks]
        if not all(ok for _, ok, _ in checks):
            status = EXIT_VERIFY_FAILED
    try:
        _emit(spec, rows)
    except OSError as exc:
        print(f"costbc: cannot write {spec.out}: {exc.strerror or exc}", file=log)
        return EXIT_IO
    for line in summary:
        print(line, file=log)
    print(f"done in {time.perf_counter() - t0:.1f} s", file=log)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="costbc", description="Cascaded OSTBC relay-network simulator")
    parser.add_argument("--version", action="version", version=f"costbc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment file; flags override its values")
        p.add_argument("--preset")
        p.add_argument("--allocation", help="'equal' or comma-separated fractions f0,f1,...")
        p.add_argument("--e-db", dest="e_db", help="total power sweep lo:hi:step (dB)")
        p.add_argument("--snr-db", dest="snr_db", help="SNR sweep lo:hi:step (dB)")
        p.add_argument("--r", type=float, help="multiplexing gain for outage")
        p.add_argument("--rate-offset", dest="rate_offset", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--min-errors", dest="min_errors", type=int)
        p.add_argument("--max-frames", dest="max_frames", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--m1", type=int)
        p.add_argument("--m2", type=int)
        p.add_argument("--e1", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    try:
        data = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    data = yaml.safe_load(fh) or {}
            except OSError as exc:
                raise ConfigError("--config", f"cannot read {args.config}: {exc.strerror or exc}") from None
            except yaml.YAMLError as exc:
                raise ConfigError("--config", f"parse error in {args.config}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("<root>", "expected a mapping of keys to values")
            if data.get("command", args.command) != args.command:
                raise ConfigError("command", f"file says {data['command']!r}, command line says {args.command!r}")
        data.update(flags)
        spec = spec_from_mapping(data)
    except ConfigError as exc:
        print(f"costbc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
