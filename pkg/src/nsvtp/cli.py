"""Command line: ``nsvtp sweep | simulate | capsule encode|decode | tx-demo``.

Exit codes: 0 success, 1 runtime failure or nothing feasible, 2 bad
configuration or unparsable input. Settings come from, in increasing
precedence, built-in defaults, the ``--config`` JSON file and flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import capsule as cap
from .dvfs import DvfsModelParams, log_grid, sweep_eta
from .errors import ConfigError, NsvtpError, SchemeSyntaxError
from .scenario import ScenarioConfig, run_scenario
from .scheme import Tweak, parse_blueprint, print_blueprint
from .sim import DVFS_FORMULA, DVFS_SCHEME, TX_ADDRESSED, Simulator, TxMode, transition_latency
from .sim import EventKind as K

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

SWEEP_DEFAULTS = {
    "rho_min": 0.1, "rho_max": 10.0, "rho_steps": 25,
    "ratio_min": 10.0, "ratio_max": 1000.0, "ratio_steps": 25,
}
MODEL_FLAGS = {"p0": "P0", "p3": "P3", "fmin": "f_min", "fmax": "f_max", "n_dvfs": "n_dvfs"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(exc: BaseException, code: int):
    return CliError(code, f"{type(exc).__name__}: {exc}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"ConfigError: cannot read {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, "ConfigError: config must be a JSON object")
    return doc


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# -- sweep -------------------------------------------------------------------


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    grid = {**SWEEP_DEFAULTS, **doc.get("grid", {})}
    model = dict(doc.get("model", {}))
    for key in SWEEP_DEFAULTS:
        if getattr(args, key) is not None:
            grid[key] = getattr(args, key)
    for flag, field_name in MODEL_FLAGS.items():
        if getattr(args, flag) is not None:
            model[field_name] = getattr(args, flag)
    try:
        params = DvfsModelParams(**{k: float(v) for k, v in model.items()})
        rho = log_grid(float(grid["rho_min"]), float(grid["rho_max"]), int(grid["rho_steps"]))
        ratio = log_grid(float(grid["ratio_min"]), float(grid["ratio_max"]), int(grid["ratio_steps"]))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"ConfigError: {exc}") from None
    result = sweep_eta(params, rho, ratio, generalized=bool(doc.get("generalized", False)))
    out = args.out if args.out is not None else doc.get("out")
    _write(out, result.to_csv())
    summary = sys.stdout if out not in (None, "-") else sys.stderr
    if not result.any_feasible:
        print(f"no feasible cell in {result.feasible.size} (all flagged infeasible)", file=summary)
        return EXIT_RUNTIME
    lo, lo_rho, lo_ratio = result.min()
    hi, hi_rho, hi_ratio = result.max()
    print(
        f"min eta={lo:.6f} at rho={lo_rho:.6g} tcomp_over_delta={lo_ratio:.6g}; "
        f"max eta={hi:.6f} at rho={hi_rho:.6g} tcomp_over_delta={hi_ratio:.6g}; "
        f"feasible {int(result.feasible.sum())}/{result.feasible.size}",
        file=summary,
    )
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def _scenario(args) -> ScenarioConfig:
    try:
        cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    except NsvtpError as exc:
        raise _fail(exc, EXIT_CONFIG) from None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    if args.out is not None:
        cfg.trace_path = args.out
    for flag, attr in (("nsvtp", "nsvtp"), ("tx_mode", "tx_mode")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, attr, value)
    try:
        cfg.validate()
    except NsvtpError as exc:
        raise _fail(exc, EXIT_CONFIG) from None
    try:
        run = run_scenario(cfg)
    except NsvtpError as exc:
        raise _fail(exc, EXIT_RUNTIME) from None
    if cfg.trace_path:
        Path(cfg.trace_path).write_text(run.sim.trace_lines(), encoding="utf-8")
    report = run.report.to_json()
    if cfg.report_path:
        Path(cfg.report_path).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK


# -- capsule -----------------------------------------------------------------


def _read(path) -> bytes:
    try:
        if path == "-":
            return sys.stdin.buffer.read()
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"ConfigError: {exc}") from None


def cmd_capsule_encode(args) -> int:
    text = _read(args.blueprint).decode("utf-8")
    try:
        bp = parse_blueprint(text)
        status = None
        if args.status:
            status = cap.StatusRecord(json.loads(_read(args.status)))
        xid = cap.ExtendedResourceId(args.id, cap.northwise(bp.to_bytes(), status))
        data = cap.encode_extended_id(xid)
    except SchemeSyntaxError as exc:
        raise CliError(EXIT_CONFIG, f"{type(exc).__name__}: {args.blueprint}: {exc}") from None
    except (NsvtpError, ValueError, TypeError) as exc:
        raise _fail(exc, EXIT_CONFIG) from None
    if args.out in (None, "-"):
        sys.stdout.buffer.write(data + b"\n")
    else:
        Path(args.out).write_bytes(data)
    return EXIT_OK


def cmd_capsule_decode(args) -> int:
    data = _read(args.input).strip()
    try:
        xid = cap.decode_extended_id(data)
    except NsvtpError as exc:
        raise _fail(exc, EXIT_CONFIG) from None
    lines = [f"id: {xid.id}"]
    if xid.appendix is None:
        lines.append("no capsule")
    else:
        c = xid.appendix
        lines.append(f"direction: {c.direction.name.lower()}")
        if c.status is not None:
            lines.append(f"status: {c.status.to_bytes().decode()}")
        for t in c.tweaks:
            lines.append(f"tweak: {t}")
        if c.blueprint is not None:
            try:
                text = print_blueprint(parse_blueprint(c.blueprint.decode("utf-8")))
            except (NsvtpError, UnicodeDecodeError) as exc:
                raise _fail(exc, EXIT_CONFIG) from None
            if args.blueprint_only:
                _write(args.out, text)
                return EXIT_OK
            lines.append("blueprint:")
            lines.append(text.rstrip("\n"))
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# -- tx-demo -----------------------------------------------------------------

_STEP_TEXT = {
    K.TX_DEPOSIT.value: "south deposits (C's, l) with the exchange",
    K.TX_CLAIM.value: "north claims with (k', layer, k'')",
    K.TX_RELEASE.value: "claim released: exchange hands (C_s, k) to north",
    K.TX_REJECT.value: "claim rejected",
    K.TX_NOTIFY_SOUTH.value: "exchange forwards k'' to south",
    K.PATHWAY_ESTABLISHED.value: "pathway established",
}


def _describe(event: dict) -> str | None:
    kind = event["kind"]
    if kind == K.NSVTP_MESSAGE.value:
        return f"{event['direction']} capsule {event['src']} -> {event['dst']} ({event['purpose']}; {', '.join(event['segments'])})"
    if kind == K.RELAY_HOP.value and event["channel"] == "nsvtp":
        return f"    relay {event['src']}(L{event['src_layer']}) -> {event['dst']}(L{event['dst_layer']})"
    if kind == K.PATHWAY_ESTABLISHED.value:
        return f"pathway {event['pathway']} established at {event['side']} end ({event['mode']})"
    if kind == K.TX_REJECT.value:
        return f"claim rejected: {event['error']}: {event['detail']}"
    if kind == K.FREQUENCY_CHANGE_START.value:
        return f"south starts clock change {event['from_ghz']} -> {event['to_ghz']} GHz"
    if kind == K.FREQUENCY_CHANGE_DONE.value:
        return f"south settled at {event['ghz']} GHz ({event['power_w']:.3f} W)"
    return _STEP_TEXT.get(kind)


def tx_demo(cfg: ScenarioConfig, direct: bool = False, claimant_layer: int | None = None) -> Simulator:
    """Handshake followed by one direct round-trip in each direction."""

    topo, north, south = cfg.build()
    if len(topo.slots) < 3:
        raise ConfigError("tx-demo needs at least one middle layer")
    sim = Simulator(
        topo, cfg.model, north=north, south=south, nsvtp=True,
        tx_mode=TxMode.DIRECT if direct else TxMode.VIA_TX,
        hop_delay=cfg.hop_delay, seed=cfg.seed, claim_layer_override=claimant_layer,
    )
    sim.start().run()
    if sim.errors:
        return sim
    pw = sim.active_pathway()
    core = sim.south
    sim.send_nsvtp(core.id, sim.north.id, cap.northwise(core.blueprint.to_bytes(), sim._status_record(core, pw)))
    sim.run()
    if pw.blueprint.has_scheme(DVFS_SCHEME):
        latency = transition_latency(pw.blueprint)
        tweak = Tweak(DVFS_SCHEME, DVFS_FORMULA, {"freq_step": cfg.model.f_min, "latency": latency})
        sim.send_nsvtp(sim.north.id, core.id, cap.southwise([tweak]))
        sim.run()
    return sim


def cmd_tx_demo(args) -> int:
    cfg = _scenario(args)
    try:
        cfg.validate()
        sim = tx_demo(cfg, direct=args.direct, claimant_layer=args.claimant_layer)
    except NsvtpError as exc:
        raise _fail(exc, EXIT_CONFIG) from None
    lines = []
    step = 0
    released = False
    after_release = 0
    for event in sim.trace:
        text = _describe(event)
        if event["kind"] == K.TX_RELEASE.value:
            released = True
        elif released and event["kind"] in TX_ADDRESSED:
            after_release += 1
        if text is None:
            continue
        if not text.startswith("    "):
            step += 1
            text = f"{step:2d}. [t={event['t']:g}] {text}"
        lines.append(text)
    tx_events = sum(1 for e in sim.trace if e["kind"].startswith("tx."))
    lines.append(f"TX-addressed messages after release: {after_release}")
    lines.append(f"TX events in trace: {tx_events}")
    _write(args.out, "\n".join(lines) + "\n")
    if sim.errors:
        err = sim.errors[0]
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _shared(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="seed for key material")
    p.add_argument("--out", metavar="PATH", help="output file (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsvtp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="eta over a (rho, t_comp/delta) grid as CSV")
    _shared(sw)
    for key in SWEEP_DEFAULTS:
        flag = "--" + key.replace("_", "-")
        sw.add_argument(flag, dest=key, type=int if key.endswith("steps") else float)
    for flag in MODEL_FLAGS:
        sw.add_argument("--" + flag.replace("_", "-"), dest=flag, type=float)
    sw.set_defaults(func=cmd_sweep)

    sm = sub.add_parser("simulate", help="run a scenario; print the energy report")
    _shared(sm)
    sm.add_argument("--nsvtp", dest="nsvtp", action=argparse.BooleanOptionalAction, default=None)
    sm.add_argument("--tx-mode", dest="tx_mode", choices=[m.value for m in TxMode], default=None)
    sm.set_defaults(func=cmd_simulate)

    cp = sub.add_parser("capsule", help="encode or decode extended resource IDs")
    csub = cp.add_subparsers(dest="action", required=True)
    enc = csub.add_parser("encode", help="blueprint file + ID -> extended ID")
    _shared(enc)
    enc.add_argument("--id", required=True, help="resource ID")
    enc.add_argument("--blueprint", required=True, metavar="FILE")
    enc.add_argument("--status", metavar="FILE", help="JSON object for the status segment")
    enc.set_defaults(func=cmd_capsule_encode)
    dec = csub.add_parser("decode", help="extended ID -> ID, status and canonical blueprint")
    _shared(dec)
    dec.add_argument("input", metavar="FILE", help="file holding the extended ID ('-' for stdin)")
    dec.add_argument("--blueprint-only", action="store_true", help="print only the canonical blueprint")
    dec.set_defaults(func=cmd_capsule_decode)

    td = sub.add_parser("tx-demo", help="annotated pathway handshake")
    _shared(td)
    td.add_argument("--direct", action="store_true", help="skip the exchange")
    td.add_argument("--claimant-layer", type=int, help="layer the north claims (negative demo)")
    td.set_defaults(func=cmd_tx_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
