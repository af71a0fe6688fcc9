"""Command-line interface.

Subcommands::

    sparsedetect calibrate  --rule sl_one_sided --lambda2 auto --gamma 5000
    sparsedetect arl        --rule mei --threshold 88.5
    sparsedetect delay      --rule xs --epsilon0 0.1 --threshold 8.1
    sparsedetect table 2    --trials 500 --out table2.csv
    sparsedetect bounds     --beta 0.35 --zeta 0.4

Every run option can also come from a flat ``key = value`` file given with
``--config``; command-line flags take precedence over the file, which takes
precedence over built-in defaults. ``SPARSEDETECT_SEED`` supplies the
default master seed.

Exit codes: 0 success, 2 configuration error, 3 calibration failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import presets
from .models import BinomialShift, ChangeScenario, Family, NormalShift, PoissonShift
from .montecarlo import CalibrationError, calibrate_threshold, estimate_arl, estimate_delay
from .rules import RuleConfig, RuleKind
from .score import SparsityParams, default_lambda2
from .theory import Regime, RegimeParams, asymptotic_delay, classify_regime, delay_lower_bound, threshold_upper_bound
from .windows import build_window_set

__all__ = ["main", "build_parser", "Record", "render_csv", "render_text"]

log = logging.getLogger("sparsedetect")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3

CSV_COLUMNS = ("rule", "params", "model", "subset_size", "threshold", "metric", "value",
               "std_error", "trials", "seed")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _auto_or_float(text: str) -> float | str:
    return "auto" if str(text).strip().lower() == "auto" else float(text)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _rule_kind(text: str) -> RuleKind:
    aliases = {"sl": RuleKind.SL_TWO_SIDED, "sl1": RuleKind.SL_ONE_SIDED}
    key = str(text).strip().lower().replace("-", "_")
    if key in aliases:
        return aliases[key]
    try:
        return RuleKind(key)
    except ValueError:
        choices = ", ".join(k.value for k in RuleKind)
        raise argparse.ArgumentTypeError(f"unknown rule {text!r} (choose from {choices})") from None


# (flag, type, default, help)
RUN_OPTIONS = [
    ("--rule", _rule_kind, RuleKind.SL_ONE_SIDED, "rule kind (sl_two_sided, sl_one_sided, xs, mei, mei_eps, modified_mlr)"),
    ("--lambda1", float, 1.0, "SL weight of the extreme-sparsity term"),
    ("--lambda2", _auto_or_float, "auto", "SL weight of the moderate-sparsity term, or 'auto' for sqrt(log g / log log g)"),
    ("--epsilon0", float, None, "mixing proportion for xs, mei_eps and modified_mlr"),
    ("--delta0", float, 1.0, "CUSUM drift parameter for mei rules"),
    ("--lambda-m", _auto_or_float, "auto", "detectability constant of mei_eps, or 'auto' for the null-calibrated value"),
    ("--model", str, "normal", "data model: normal, poisson or binomial"),
    ("--delta", float, 1.0, "post-change mean shift (normal model)"),
    ("--pre-mean", float, 0.015, "pre-change Poisson mean"),
    ("--post-mean", float, 0.3, "post-change Poisson mean"),
    ("--binomial-trials", int, 5, "binomial number of trials"),
    ("--pre-prob", float, 0.001, "pre-change binomial success probability"),
    ("--post-prob", float, 0.05, "post-change binomial success probability"),
    ("--n-streams", int, 100, "number of data streams N"),
    ("--window-k1", int, 200, "all window lengths 1..k1 are used"),
    ("--window-r", float, 2.0, "geometric ratio for window lengths beyond k1"),
    ("--window-cap", int, 200, "largest window length"),
    ("--gamma", float, 5000.0, "target ARL"),
    ("--threshold", float, None, "detection threshold"),
    ("--trials", int, 500, "Monte Carlo trials"),
    ("--horizon", int, None, "censoring horizon (default: 30*gamma for ARL, 10000 for delay)"),
    ("--seed", int, None, "master seed (default: $SPARSEDETECT_SEED or 0)"),
    ("--subset-sizes", _int_list, presets.SUBSET_SIZES, "comma-separated affected-subset sizes"),
    ("--out", str, None, "write CSV to this path"),
    ("--format", str, "text", "stdout rendering: csv or text"),
    ("--workers", int, 1, "worker processes (results do not depend on it)"),
]
_CONVERTERS = {flag[2:].replace("-", "_"): typ for flag, typ, _, _ in RUN_OPTIONS}
_DEFAULTS = {flag[2:].replace("-", "_"): default for flag, _, default, _ in RUN_OPTIONS}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    for flag, typ, _, text in RUN_OPTIONS:
        kwargs = {"type": typ, "default": argparse.SUPPRESS, "help": text}
        if flag == "--format":
            kwargs["choices"] = ("csv", "text")
        parser.add_argument(flag, **kwargs)
    parser.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="flat key = value file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log calibration progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsedetect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("calibrate", "calibrate a threshold to the target ARL"),
        ("arl", "estimate the ARL at a given threshold"),
        ("delay", "estimate detection delays for each subset size"),
    ]:
        _add_run_options(sub.add_parser(name, help=text))
    tab = sub.add_parser("table", help="reproduce one of the reference tables 1-6")
    tab.add_argument("table_id", type=int, choices=range(1, 7))
    _add_run_options(tab)
    bnd = sub.add_parser("bounds", help="regime classification and asymptotic delay bounds")
    bnd.add_argument("--beta", type=float, required=True)
    bnd.add_argument("--zeta", type=float, required=True)
    bnd.add_argument("--delta", type=float, default=1.0)
    bnd.add_argument("--n-streams", type=int, default=100)
    bnd.add_argument("--subset-size", type=int, default=None, help="V, needed in the extreme regime")
    bnd.add_argument("--gamma", type=float, default=None, help="also report the SL threshold bound")
    return parser


def read_config_file(path: Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def resolve_settings(args: argparse.Namespace) -> dict:
    given = vars(args).copy()
    settings = dict(_DEFAULTS)
    env_seed = os.environ.get("SPARSEDETECT_SEED")
    if env_seed is not None:
        try:
            settings["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"SPARSEDETECT_SEED must be an integer, got {env_seed!r}") from None
    if "config" in given:
        settings.update(read_config_file(given.pop("config")))
    settings.update(given)
    if settings["seed"] is None:
        settings["seed"] = 0
    return settings


# configuration -> objects ---------------------------------------------------


def build_family(s: dict) -> Family:
    model = s["model"].strip().lower()
    if model == "normal":
        return NormalShift(s["delta"])
    if model == "poisson":
        return PoissonShift(s["pre_mean"], s["post_mean"])
    if model == "binomial":
        return BinomialShift(s["binomial_trials"], s["pre_prob"], s["post_prob"])
    raise ConfigError(f"unknown model {s['model']!r} (choose normal, poisson or binomial)")


def build_rule(s: dict, family: Family) -> RuleConfig:
    kind: RuleKind = s["rule"]
    n = s["n_streams"]
    windows = build_window_set(s["window_k1"], s["window_r"], s["window_cap"]) if kind.windowed else None
    null = family.null_spec()
    if null is not None and kind is not RuleKind.SL_TWO_SIDED:
        raise ConfigError(f"the {family.name} model is only supported by sl_two_sided")
    if kind.is_sl:
        lam2 = s["lambda2"]
        if lam2 == "auto":
            lam2 = default_lambda2(s["gamma"])
        params = SparsityParams(n, s["lambda1"], lam2)
        return RuleConfig.sl(params, windows, one_sided=kind is RuleKind.SL_ONE_SIDED, null=null)
    if kind is RuleKind.MEI:
        return RuleConfig.mei(n, s["delta0"])
    if s["epsilon0"] is None:
        raise ConfigError(f"{kind.value} needs --epsilon0")
    if kind is RuleKind.XS:
        return RuleConfig.xs(n, s["epsilon0"], windows)
    if kind is RuleKind.MODIFIED_MLR:
        return RuleConfig.modified_mlr(n, s["epsilon0"], windows)
    lam_m = None if s["lambda_m"] == "auto" else s["lambda_m"]
    return RuleConfig.mei_eps(n, s["epsilon0"], s["delta0"], lam_m)


def model_tag(family: Family) -> str:
    if isinstance(family, NormalShift):
        return f"normal(delta={family.delta:g})"
    if isinstance(family, PoissonShift):
        return f"poisson(pre={family.pre_mean:g};post={family.post_mean:g})"
    return f"binomial(n={family.trials};pre={family.pre_prob:g};post={family.post_prob:g})"


# records and rendering --------------------------------------------------------


@dataclass(frozen=True)
class Record:
    rule: str
    params: str
    model: str
    subset_size: int | None
    threshold: float | None
    metric: str
    value: float
    std_error: float | None
    trials: int
    seed: int
    note: str = ""
    reference: float | None = None
    censored: int | None = None


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def render_csv(records: list[Record]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.rule, r.params, r.model, _num(r.subset_size), _num(r.threshold), r.metric,
                         _num(r.value), _num(r.std_error), _num(r.trials), _num(r.seed)])
    return buf.getvalue()


def _cell(r: Record) -> str:
    if r.note:
        return f"failed: {r.note}"
    if r.std_error is None or math.isnan(r.std_error):
        return f"{r.value:.4g}"
    return f"{r.value:.4g} ({r.std_error:.2g})"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for k, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_text(records: list[Record]) -> str:
    """Aligned rendering: one line per rule for ARL results, and a
    rule-by-subset-size grid for delays. Cells read ``value (std error)``."""
    out = []
    arl = [r for r in records if r.metric == "arl"]
    delay = [r for r in records if r.metric == "delay"]
    if arl:
        rows = [["rule", "threshold", "ARL (se)", "censored", "reference"]]
        for r in arl:
            rows.append([r.rule, _num(r.threshold), _cell(r), _num(r.censored), _num(r.reference)])
        out.append(_align(rows))
    if delay:
        sizes = sorted({r.subset_size for r in delay})
        by_rule: dict[str, dict[int, Record]] = {}
        for r in delay:
            by_rule.setdefault(r.rule, {})[r.subset_size] = r
        rows = [["rule", "threshold"] + [f"#{k}" for k in sizes]]
        for rule, cells in by_rule.items():
            first = next(iter(cells.values()))
            rows.append([rule, _num(first.threshold)] + [_cell(cells[k]) if k in cells else "" for k in sizes])
        out.append(_align(rows))
        refs = [r for r in delay if r.reference is not None]
        if refs:
            rows = [["reference", ""] + [f"#{k}" for k in sizes]]
            seen = {}
            for r in refs:
                seen.setdefault(r.rule, {})[r.subset_size] = r.reference
            for rule, cells in seen.items():
                rows.append([rule, ""] + [_num(cells.get(k)) for k in sizes])
            out.append(_align(rows))
    return "\n".join(out)


def _emit(records: list[Record], s: dict) -> None:
    text = render_csv(records)
    if s["out"]:
        Path(s["out"]).write_text(text)
    if s["format"] == "csv":
        if not s["out"]:
            sys.stdout.write(text)
    else:
        sys.stdout.write(render_text(records))


# commands -------------------------------------------------------------------------


def _arl_record(rule, family, threshold, est, s, reference=None, note=""):
    params = rule.describe()
    if est is not None:
        params += f";censored={est.censored_count}"
    return Record(rule.label, params, model_tag(family), None, threshold, "arl",
                  math.nan if est is None else est.arl, None if est is None else est.std_error,
                  s["trials"], s["seed"], note, reference, None if est is None else est.censored_count)


def _calibrate(rule, family, s):
    return calibrate_threshold(rule, s["gamma"], family=family, trials=s["trials"],
                               master_seed=s["seed"], horizon=s["horizon"], workers=s["workers"])


def _calibration_record(rule, family, res, s, reference=None):
    params = f"{rule.describe()};censored={res.censored_count}"
    return Record(rule.label, params, model_tag(family), None, res.threshold, "arl", res.estimated_arl,
                  res.std_error, res.trials, res.master_seed, "", reference, res.censored_count)


def _delay_records(rule, family, threshold, sizes, s, references=None):
    records = []
    horizon = s["horizon"] if s["horizon"] is not None else 10_000
    for i, size in enumerate(sizes):
        if not 1 <= size <= rule.num_streams:
            raise ConfigError(f"subset size must lie in 1..{rule.num_streams}, got {size}")
        ref = None
        if references is not None and size in presets.SUBSET_SIZES:
            ref = references[presets.SUBSET_SIZES.index(size)]
        res = estimate_delay(rule, threshold, ChangeScenario.immediate(size, family), trials=s["trials"],
                             master_seed=s["seed"], horizon=horizon, workers=s["workers"])
        records.append(Record(rule.label, f"{rule.describe()};censored={res.censored_count}",
                              model_tag(family), size, threshold, "delay", res.mean_delay, res.std_error,
                              res.trials, res.master_seed, "", ref, res.censored_count))
    return records


def cmd_calibrate(s: dict) -> int:
    family = build_family(s)
    rule = build_rule(s, family)
    res = _calibrate(rule, family, s)
    _emit([_calibration_record(rule, family, res, s)], s)
    return EXIT_OK


def cmd_arl(s: dict) -> int:
    if s["threshold"] is None:
        raise ConfigError("arl needs --threshold")
    family = build_family(s)
    rule = build_rule(s, family)
    horizon = s["horizon"] if s["horizon"] is not None else int(30 * s["gamma"])
    est = estimate_arl(rule, s["threshold"], family=family, trials=s["trials"], horizon=horizon,
                       master_seed=s["seed"], workers=s["workers"])
    _emit([_arl_record(rule, family, s["threshold"], est, s)], s)
    return EXIT_OK


def cmd_delay(s: dict) -> int:
    family = build_family(s)
    rule = build_rule(s, family)
    records = []
    threshold = s["threshold"]
    if threshold is None:
        res = _calibrate(rule, family, s)
        records.append(_calibration_record(rule, family, res, s))
        threshold = res.threshold
    records += _delay_records(rule, family, threshold, s["subset_sizes"], s)
    _emit(records, s)
    return EXIT_OK


def cmd_table(table_id: int, s: dict) -> int:
    kind, rows = presets.table_rows(table_id)
    records: list[Record] = []
    failed = False
    arl_horizon = s["horizon"] if s["horizon"] is not None else int(30 * s["gamma"])
    for row in rows:
        rule, family = row.rule, row.family
        try:
            if kind == "calibrate":
                res = _calibrate(rule, family, s)
                records.append(_calibration_record(rule, family, res, s, row.threshold))
            elif kind == "arl":
                est = estimate_arl(rule, row.threshold, family=family, trials=s["trials"],
                                   horizon=arl_horizon, master_seed=s["seed"], workers=s["workers"])
                records.append(_arl_record(rule, family, row.threshold, est, s, row.reference_arl))
            else:
                threshold = row.threshold
                if threshold is None:
                    res = _calibrate(rule, family, s)
                    records.append(_calibration_record(rule, family, res, s))
                    threshold = res.threshold
                records += _delay_records(rule, family, threshold, s["subset_sizes"], s,
                                          row.reference_delays)
        except CalibrationError as exc:
            failed = True
            log.error("%s: %s", rule.label, exc)
            records.append(_arl_record(rule, family, row.threshold, None, s, note=str(exc)))
    _emit(records, s)
    return EXIT_CALIBRATION if failed else EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    params = RegimeParams(args.beta, args.zeta, args.delta, args.n_streams, args.subset_size)
    regime = classify_regime(args.beta, args.zeta)
    label = {Regime.DENSE: "dense", Regime.MODERATE: "(a) moderate", Regime.EXTREME: "(b) extreme"}[regime]
    lines = [f"regime: {label}"]
    if regime is Regime.DENSE:
        lines.append("lower bound: none beyond 1")
    else:
        lines.append(f"lower bound: {delay_lower_bound(params):.6g}")
    lines.append(f"asymptotic SL delay: {asymptotic_delay(params):.6g}")
    if args.gamma is not None:
        lines.append(f"SL threshold bound: {threshold_upper_bound(args.gamma):.6g}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    if hasattr(args, "verbose"):
        del args.verbose
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    del args.command
    try:
        if command == "bounds":
            return cmd_bounds(args)
        table_id = getattr(args, "table_id", None)
        if table_id is not None:
            del args.table_id
        s = resolve_settings(args)
        if command == "calibrate":
            return cmd_calibrate(s)
        if command == "arl":
            return cmd_arl(s)
        if command == "delay":
            return cmd_delay(s)
        return cmd_table(table_id, s)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
