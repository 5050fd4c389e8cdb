"""Command-line experiment runner.

Usage::

    qkd3 <subcommand> [--config FILE.json] [--out PATH] [--format csv|json]
                      [--seed N] [--trials N] [--threads N]

Each subcommand reads a JSON config (unknown keys are rejected), applies the
command-line overrides, computes its rows in grid order and writes a CSV or
JSON table. Every output embeds the tool version and the resolved config,
which is enough to regenerate the file byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Optional

from qkd3 import __version__
from qkd3.analysis import (
    DEFAULT_TRIALS,
    KeyRateInputs,
    advantage_distance,
    efficiency_crossing,
    key_rate,
    mc_pe_auth_mim,
    mc_pe_auth_norm,
    mc_pe_ir_pns,
    mim_fraction,
    qber_threshold,
    rate_efficiency,
)
from qkd3.attacks import InterceptResend, ManInTheMiddle, NoAttack, PhotonNumberSplitting
from qkd3.protocol import SessionConfig, load_transcript_summary, run_session
from qkd3.specfun import X_MAX, bessel_i0, i0_minus_l0, pe_auth_norm_analytic, struve_l0

FORMATS = ("csv", "json")
SCENARIOS = ("ir_lossless", "ir_lossy", "pns_lossless", "pns_lossy")

# keys that never change the content of an output file
_NOT_ECHOED = ("out", "threads")


class ConfigError(ValueError):
    pass


@dataclass
class Table:
    columns: list[str]
    rows: list[dict]
    failures: list[str]


def scenario_budgets(scenario: str, mean_n: float, t: float) -> tuple[float, float]:
    """Eve's photon budgets (N1, N2) for the two stages she measures."""
    if scenario == "ir_lossless":
        return mean_n, mean_n
    if scenario == "ir_lossy":
        return mean_n, t * mean_n
    if scenario == "pns_lossless":
        return 0.5 * mean_n, 0.5 * mean_n
    if scenario == "pns_lossy":
        return (1.0 - t) * mean_n, (1.0 - t) * t * mean_n
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")


# -- subcommands ---------------------------------------------------------------

def cmd_attack_sweep(cfg: dict) -> Table:
    cols = ["scenario", "N", "t", "N1", "N2", "p_hat", "ci", "trials", "seed", "note"]
    rows, failures = [], []
    for scenario in cfg["scenarios"]:
        scenario_budgets(scenario, 1.0, 1.0)
    for scenario in cfg["scenarios"]:
        for t in cfg["t_grid"]:
            for n in cfg["n_grid"]:
                n1, n2 = scenario_budgets(scenario, n, t)
                row = {"scenario": scenario, "N": n, "t": t, "N1": n1, "N2": n2,
                       "trials": cfg["trials"], "seed": cfg["seed"], "note": None}
                if n1 <= 0 or n2 <= 0:
                    # no photons reach Eve: her bit guess is a coin flip
                    row.update(p_hat=0.5, ci=0.0, trials=0, note="eve_has_no_photons")
                else:
                    try:
                        est = mc_pe_ir_pns(n1, n2, cfg["trials"], cfg["seed"], cfg["threads"])
                    except ValueError as exc:
                        failures.append(f"{scenario} N={n} t={t}: {exc}")
                        continue
                    row.update(p_hat=est.p_hat, ci=est.ci_half_width)
                rows.append(row)
    return Table(cols, rows, failures)


def cmd_auth_sweep(cfg: dict) -> Table:
    cols = ["t", "N", "pe_norm_mc", "pe_norm_mc_ci", "pe_norm_analytic",
            "pe_mim_mc", "pe_mim_mc_ci", "difference", "note"]
    rows, failures = [], []
    for t in cfg["t_grid"]:
        for n in cfg["n_grid"]:
            try:
                norm = mc_pe_auth_norm(t, n, cfg["trials"], cfg["seed"], cfg["threads"])
                analytic = pe_auth_norm_analytic(t, n)
            except ValueError as exc:
                failures.append(f"t={t} N={n}: {exc}")
                continue
            row = {"t": t, "N": n, "pe_norm_mc": norm.p_hat, "pe_norm_mc_ci": norm.ci_half_width,
                   "pe_norm_analytic": analytic, "pe_mim_mc": None, "pe_mim_mc_ci": None,
                   "difference": None, "note": None}
            if t >= 1.0:
                row["note"] = "mim_undefined_at_t=1"
            else:
                mim = mc_pe_auth_mim(t, n, cfg["trials"], cfg["seed"], cfg["threads"])
                row.update(pe_mim_mc=mim.p_hat, pe_mim_mc_ci=mim.ci_half_width,
                           difference=mim.p_hat - norm.p_hat)
            rows.append(row)
    return Table(cols, rows, failures)


def _infer_f(t: float, n: float, measured: Optional[float], trials: int, seed: int, threads: int):
    """Return (f, note) from a measured authentication error rate."""
    if measured is None:
        return None, "no_authentication_data"
    if t >= 1.0:
        # a lossless line leaves Eve no photons to re-prepare from
        return 0.0, "no_mim_budget_at_t=1"
    norm = pe_auth_norm_analytic(t, n)
    mim = mc_pe_auth_mim(t, n, trials, seed, threads).p_hat
    try:
        return mim_fraction(measured, norm, mim), None
    except ValueError:
        return None, "mim_fraction_degenerate"


def _keyrate_row(n, t, q, f, raw_rate, eve_pe, note=None) -> dict:
    row = {"N": n, "t": t, "Q": q, "f": f, "R": raw_rate, "eve_pe": eve_pe,
           "K": None, "qber_threshold": None, "note": note}
    if f is None:
        return row
    pe = min(eve_pe, 0.5)
    if q > 0.5:
        row["note"] = "qber_above_half"
        q = 0.5
    row["K"] = key_rate(KeyRateInputs(raw_rate, f, pe, q))
    row["qber_threshold"] = qber_threshold(f, pe) if pe > 0 else 0.0
    return row


def _eve_pe(n: float, t: float, cfg: dict) -> float:
    # default ir_lossy budgets (N, tN) are the conservative choice
    n1, n2 = scenario_budgets(cfg["eve_pe_scenario"], n, t)
    if n1 <= 0 or n2 <= 0:
        return 0.5
    return mc_pe_ir_pns(n1, n2, cfg["trials"], cfg["seed"], cfg["threads"]).p_hat


def cmd_keyrate(cfg: dict) -> Table:
    cols = ["N", "t", "Q", "f", "R", "eve_pe", "K", "qber_threshold", "note"]
    rows, failures = [], []
    if cfg["transcript"] is not None:
        doc = load_transcript_summary(cfg["transcript"])
        sc, summ = doc["config"], doc["summary"]
        n, t = sc["mean_n"], sc["transmittance"]
        q = summ["qber_estimate"]
        if q is None:
            failures.append(f"{cfg['transcript']}: transcript has no QBER estimate")
            return Table(cols, rows, failures)
        f, note = _infer_f(t, n, summ["auth_error_rate_bob"], cfg["trials"], cfg["seed"], cfg["threads"])
        rows.append(_keyrate_row(n, t, q, f, summ["raw_rate"], _eve_pe(n, t, cfg), note))
        return Table(cols, rows, failures)
    for t in cfg["t_grid"]:
        for n in cfg["n_grid"]:
            try:
                pe = _eve_pe(n, t, cfg)
            except ValueError as exc:
                failures.append(f"N={n} t={t}: {exc}")
                continue
            for q in cfg["q_grid"]:
                if not 0.0 <= q <= 0.5:
                    failures.append(f"N={n} t={t} Q={q}: QBER must be in [0, 0.5]")
                    continue
                rows.append(_keyrate_row(n, t, q, cfg["f"], cfg["raw_rate"], pe))
    return Table(cols, rows, failures)


def cmd_efficiency(cfg: dict) -> Table:
    cols = ["N", "l", "E", "advantage_distance", "crossing"]
    rows, failures = [], []
    for n in cfg["n_grid"]:
        try:
            adv = advantage_distance(n, cfg["alpha"])
            cross = efficiency_crossing(n, cfg["alpha"], cfg["passes"])
        except ValueError as exc:
            failures.append(f"N={n}: {exc}")
            continue
        for length in cfg["l_grid"]:
            try:
                e = rate_efficiency(n, length, cfg["alpha"], cfg["passes"])
            except ValueError as exc:
                failures.append(f"N={n} l={length}: {exc}")
                continue
            rows.append({"N": n, "l": length, "E": e, "advantage_distance": adv, "crossing": cross})
    return Table(cols, rows, failures)


def make_attack(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", "none")
    try:
        if kind == "none":
            attack = NoAttack()
        elif kind == "intercept_resend":
            attack = InterceptResend(**spec)
        elif kind == "photon_number_splitting":
            attack = PhotonNumberSplitting(**spec)
        elif kind == "man_in_the_middle":
            attack = ManInTheMiddle()
        else:
            raise ConfigError(f"unknown attack kind {kind!r}")
    except TypeError as exc:
        raise ConfigError(f"bad parameters for attack {kind!r}: {exc}") from None
    if kind in ("none", "man_in_the_middle") and spec:
        raise ConfigError(f"attack {kind!r} takes no parameters, got {sorted(spec)}")
    return attack


_SESSION_KEYS = ("mean_n", "transmittance", "n_pulses", "p_auth_bob", "p_auth_alice",
                 "misalignment_sigma", "qber_sample_fraction", "seed", "min_raw_rate")


def cmd_protocol_sim(cfg: dict) -> Table:
    cols = ["attack", "N", "t", "n_pulses", "sifted", "key_bits", "raw_rate", "qber",
            "auth_error_bob", "auth_error_alice", "f", "eve_pe", "K", "abandoned", "note"]
    session = SessionConfig(**{k: cfg[k] for k in _SESSION_KEYS})
    attack = make_attack(cfg["attack"])
    tr = run_session(session, attack, threads=cfg["threads"])
    if cfg["transcript_out"]:
        with open(cfg["transcript_out"], "w") as fh:
            fh.write(tr.to_json(include_pulses=cfg["include_pulses"]))
            fh.write("\n")
    n, t = session.mean_n, session.transmittance
    f, note = _infer_f(t, n, tr.auth_error_rate_bob, cfg["trials"], cfg["seed"], cfg["threads"])
    kr = {"f": f, "eve_pe": None, "K": None}
    if tr.qber_estimate is None:
        note = note or "no_qber_estimate"
    else:
        kr = _keyrate_row(n, t, tr.qber_estimate, f, tr.raw_rate, _eve_pe(n, t, cfg), note)
        note = kr["note"]
    row = {"attack": attack.describe()["kind"], "N": n, "t": t, "n_pulses": session.n_pulses,
           "sifted": int(tr.sifted_bits.size), "key_bits": int(tr.key.size), "raw_rate": tr.raw_rate,
           "qber": tr.qber_estimate, "auth_error_bob": tr.auth_error_rate_bob,
           "auth_error_alice": tr.auth_error_rate_alice, "f": kr["f"], "eve_pe": kr["eve_pe"],
           "K": kr["K"], "abandoned": tr.abandoned, "note": note}
    return Table(cols, [row], [])


def cmd_specfun_table(cfg: dict) -> Table:
    cols = ["x", "I0", "L0", "I0_minus_L0", "pe_auth_norm", "note"]
    rows, failures = [], []
    for x in cfg["x_grid"]:
        try:
            row = {"x": x, "I0": bessel_i0(x).value, "L0": struve_l0(x).value,
                   "I0_minus_L0": i0_minus_l0(x).value, "pe_auth_norm": None, "note": None}
        except ValueError as exc:
            failures.append(f"x={x}: {exc}")
            continue
        # pe_auth_norm at tN = 2x
        if 0.0 < 2.0 * x <= X_MAX:
            row["pe_auth_norm"] = pe_auth_norm_analytic(1.0, 2.0 * x)
        else:
            row["note"] = "tN_outside_closed_form_domain"
        rows.append(row)
    return Table(cols, rows, failures)


# -- config handling -----------------------------------------------------------

_COMMON = {"seed": 0, "format": "csv", "out": None, "threads": 1}

COMMANDS: dict[str, tuple[Callable[[dict], Table], dict]] = {
    "attack-sweep": (cmd_attack_sweep, {
        "scenarios": list(SCENARIOS),
        "n_grid": [0.5, 1, 2, 3, 5, 7, 10, 15, 20],
        "t_grid": [1.0, 0.75, 0.5, 0.25],
        "trials": DEFAULT_TRIALS,
    }),
    "auth-sweep": (cmd_auth_sweep, {
        "n_grid": [0.1, 0.25, 0.5, 1, 2, 4, 8],
        "t_grid": [0.9, 0.5, 0.25, 0.1],
        "trials": DEFAULT_TRIALS,
    }),
    "keyrate": (cmd_keyrate, {
        "n_grid": [1, 2, 3, 5, 10],
        "t_grid": [0.9, 0.5],
        "q_grid": [0.0, 0.01, 0.02, 0.05, 0.1],
        "f": 0.0,
        "raw_rate": 1.0,
        "transcript": None,
        "eve_pe_scenario": "ir_lossy",
        "trials": DEFAULT_TRIALS,
    }),
    "efficiency": (cmd_efficiency, {
        "n_grid": [0.5, 1, 3, 5, 10],
        "l_grid": [0, 5, 10, 15, 20, 25, 30, 40, 50],
        "alpha": 0.2,
        "passes": 3,
    }),
    "protocol-sim": (cmd_protocol_sim, {
        **{k: v for k, v in asdict(SessionConfig(mean_n=1.0)).items() if k != "seed"},
        "attack": {"kind": "none"},
        "include_pulses": False,
        "transcript_out": None,
        "eve_pe_scenario": "ir_lossy",
        "trials": DEFAULT_TRIALS,
    }),
    "specfun-table": (cmd_specfun_table, {
        "x_grid": [0, 0.1, 0.5, 1, 2, 5, 8, 10, 20, 50],
    }),
}

_GRID_KEYS = ("scenarios", "n_grid", "t_grid", "q_grid", "l_grid", "x_grid")


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    """Merge defaults, file values and flag overrides; reject unknown keys."""
    defaults = {**_COMMON, **COMMANDS[command][1]}
    unknown = sorted(set(file_cfg) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {**defaults, **file_cfg}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    for key in _GRID_KEYS:
        if key in cfg and (not isinstance(cfg[key], list) or not cfg[key]):
            raise ConfigError(f"{key} must be a non-empty list")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    if cfg["format"] not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {cfg['format']!r}")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if "eve_pe_scenario" in cfg:
        scenario_budgets(cfg["eve_pe_scenario"], 1.0, 1.0)
    if "trials" in cfg and (not isinstance(cfg["trials"], int) or cfg["trials"] < 1000):
        raise ConfigError("trials must be an integer >= 1000")
    return cfg


def echo_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in _NOT_ECHOED}


# -- output --------------------------------------------------------------------

def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r} in output")
        return repr(v)
    return str(v)


def metadata(command: str, cfg: dict) -> dict:
    return {"tool": "qkd3", "version": __version__, "command": command,
            "seed": cfg["seed"], "config": echo_config(cfg)}


def render(command: str, cfg: dict, table: Table) -> str:
    meta = metadata(command, cfg)
    if cfg["format"] == "json":
        doc = {"metadata": meta, "rows": [{c: r[c] for c in table.columns} for r in table.rows]}
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    buf.write(f"# tool: qkd3 {__version__}\n")
    buf.write(f"# command: {command}\n")
    buf.write(f"# seed: {cfg['seed']}\n")
    buf.write(f"# config: {json.dumps(meta['config'], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for r in table.rows:
        writer.writerow([_cell(r[c]) for c in table.columns])
    return buf.getvalue()


def read_csv_output(text: str) -> tuple[dict, list[dict]]:
    """Parse a CSV written by :func:`render` back into (metadata, rows of strings)."""
    meta_lines = [ln[2:] for ln in text.splitlines() if ln.startswith("# ")]
    meta = {}
    for ln in meta_lines:
        key, _, value = ln.partition(": ")
        meta[key] = json.loads(value) if key == "config" else value
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))
    return meta, list(csv.DictReader(io.StringIO(body)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkd3", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qkd3 {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--threads", type=int)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_cfg = {}
        if args.config:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        overrides = {"out": args.out, "format": args.format, "seed": args.seed,
                     "trials": args.trials, "threads": args.threads}
        if args.trials is not None and "trials" not in COMMANDS[args.command][1]:
            raise ConfigError(f"{args.command} takes no --trials")
        cfg = resolve_config(args.command, file_cfg, overrides)
        table = COMMANDS[args.command][0](cfg)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"qkd3 {args.command}: error: {exc}", file=sys.stderr)
        return 2
    text = render(args.command, cfg, table)
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for msg in table.failures:
        print(f"qkd3 {args.command}: row failed: {msg}", file=sys.stderr)
    return 1 if table.failures else 0


if __name__ == "__main__":
    sys.exit(main())
