"""``vbid`` command line front end.

Every command writes into an output directory and finishes by writing
``manifest.json`` there (atomically), holding SHA-256 digests of the inputs
and outputs, the config hash, the seed and the tool version.  Exit codes:
0 success, 1 usage or configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import gbt
from .config import config_hash, load_config
from .errors import DataError, InvalidConfig, ParseError, VbidError
from .market import (
    MarketDataset,
    SyntheticConfig,
    format_hour,
    generate_synthetic_market,
    load_dataset,
    write_dataset,
)
from .nn.forecast import (
    fit_quantity_model,
    fit_spread_model,
    load_model,
    predict_net_virtual_quantity,
    predict_spread,
)
from .portfolio import PortfolioInstance, solve_branch_and_bound
from .sensitivity import SensitivityBounds, flat_pwl, read_pwl_csv, write_pwl_csv

log = logging.getLogger("vbid")

MANIFEST = "manifest.json"
DATA_FILES = ("lmp.csv", "features.csv", "vbids.csv")


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclasses.dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    inputs: dict
    outputs: dict
    tool_version: str
    wall_time: float

    def write(self, directory):
        return atomic_write(Path(directory) / MANIFEST, json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, directory):
        try:
            return cls(**json.loads((Path(directory) / MANIFEST).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ParseError(f"cannot read manifest in {directory}: {exc}") from None

    def verify(self, directory):
        """Names of inputs/outputs whose current digest differs (or which are missing)."""
        bad = []
        for group in (self.inputs, self.outputs):
            for name, digest in group.items():
                p = Path(name) if group is self.inputs else Path(directory) / name
                if not p.exists() or file_digest(p) != digest:
                    bad.append(str(name))
        return bad


# -- config handling -------------------------------------------------------------

_SYNTH_KEYS = set(SyntheticConfig.__dataclass_fields__)
_BT_KEYS = set(bt.BacktestConfig.__dataclass_fields__)


def split_config(mapping):
    unknown = sorted(set(mapping) - _SYNTH_KEYS - _BT_KEYS)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    synth = {k: v for k, v in mapping.items() if k in _SYNTH_KEYS}
    btc = {k: v for k, v in mapping.items() if k in _BT_KEYS}
    return SyntheticConfig.from_mapping(synth), bt.BacktestConfig.from_mapping(btc)


def _config_help():
    lines = ["config keys (file of 'key = value' lines, '#' comments):"]
    for cls in (SyntheticConfig, bt.BacktestConfig):
        for f in dataclasses.fields(cls):
            lines.append(f"  {f.name} (default {f.default})")
    return "\n".join(lines)


# -- commands --------------------------------------------------------------------

def _data_paths(args):
    """The three input CSVs: ``--data DIR`` or explicit ``--lmp/--features/--vbids``."""
    explicit = [getattr(args, k, None) for k in ("lmp", "features", "vbids")]
    if all(explicit):
        return [Path(p) for p in explicit]
    if any(explicit) or not getattr(args, "data", None):
        raise InvalidConfig("give --data DIR or all of --lmp, --features and --vbids")
    return [Path(args.data) / n for n in DATA_FILES]


def _load(args):
    return load_dataset(*_data_paths(args), ref_node=getattr(args, "ref_node", None))


def _parse_day(text):
    try:
        return np.datetime64(text, "D").astype("datetime64[s]")
    except ValueError:
        raise InvalidConfig(f"bad date {text!r}; expected YYYY-MM-DD") from None


def _before(ds: MarketDataset, day):
    if day is None:
        return ds
    mask = ds.panel.hours < day
    if not mask.any():
        raise DataError(f"no data before {format_hour(day)}")
    return ds.select(mask)


def cmd_ingest(args, cfg, ctx):
    ds = _load(args)
    write_dataset(ds, args.out)
    ctx["inputs"] = _data_paths(args)
    ctx["outputs"] = list(DATA_FILES)
    print(f"ingested {ds.panel.n_nodes} nodes x {ds.panel.n_hours} hours (reference {ds.panel.ref_node})")


def cmd_synth(args, cfg, ctx):
    synth, _ = cfg
    over = {k: v for k, v in (("n_days", args.days), ("n_nodes", args.nodes)) if v is not None}
    synth = dataclasses.replace(synth, **over)
    write_dataset(generate_synthetic_market(synth, args.seed), args.out)
    ctx["outputs"] = list(DATA_FILES)
    print(f"wrote {synth.n_days} days x {synth.n_nodes} nodes to {args.out}")


def cmd_train_spread(args, cfg, ctx):
    _, btc = cfg
    ds = _before(_load(args), _parse_day(args.until) if args.until else None)
    model = fit_spread_model(ds.panel, ds.features, btc.hyperparams(args.seed), kind=args.kind)
    model.save(Path(args.out) / "spread_model.npz")
    ctx["inputs"] = _data_paths(args)
    ctx["outputs"] = ["spread_model.npz"]
    print(f"trained {args.kind} spread model on {ds.panel.n_hours} hours")


def cmd_train_quantity(args, cfg, ctx):
    _, btc = cfg
    ds = _before(_load(args), _parse_day(args.until) if args.until else None)
    model = fit_quantity_model(ds.vbids, ds.features, btc.hyperparams(args.seed), kind=args.kind)
    model.save(Path(args.out) / "quantity_model.npz")
    ctx["inputs"] = _data_paths(args)
    ctx["outputs"] = ["quantity_model.npz"]
    print(f"trained {args.kind} net-quantity model on {ds.vbids.hours.size} hours")


def _day_features(ds, day, lookback):
    start = day - np.timedelta64(lookback, "h")
    mask = (ds.features.hours >= start) & (ds.features.hours < day + np.timedelta64(1, "D"))
    feats = ds.features.select(mask)
    hours = feats.hours[feats.hours >= day]
    if len(hours) != 24:
        raise DataError(f"features for {format_hour(day)} are incomplete")
    return feats, hours


def cmd_fit_sensitivity(args, cfg, ctx):
    _, btc = cfg
    ds = _load(args)
    day = _parse_day(args.date)
    hist = _before(ds, day)
    hist = hist.select(hist.panel.hours >= day - np.timedelta64(btc.train_days, "D"))
    X = bt._gbt_matrix(hist, hist.vbids.net)
    ens = gbt.fit(X, hist.panel.ref_spread, gbt.GbtParams(num_rounds=btc.gbt_rounds, max_depth=btc.gbt_depth))
    qm = load_model(args.quantity_model) if args.quantity_model else None
    feats, hours = _day_features(ds, day, btc.lookback if qm is not None and qm.kind == "lstm" else 0)
    if qm is not None:
        y = predict_net_virtual_quantity(qm, feats, hours).values
        ctx["inputs"] = [args.quantity_model]
    else:
        # trailing same-hour mean of the market net quantity
        y = hist.vbids.net[-24 * btc.n_samples:].reshape(-1, 24).mean(axis=0)
        ctx["inputs"] = []
    day_ds = MarketDataset(ds.panel.select(np.isin(ds.panel.hours, hours)),
                           feats.select(np.isin(feats.hours, hours)), ds.vbids.select(np.isin(ds.vbids.hours, hours)))
    bounds = SensitivityBounds.from_history(hist.vbids.net)
    ctxm = bt._gbt_matrix(day_ds, y)
    pwl = [bt._hour_pwl(ens, ctxm[h], float(y[h]), bounds, ds.panel.n_nodes, h) for h in range(24)]
    out = Path(args.out)
    write_pwl_csv(pwl, out / "pwl.csv")
    gbt.save(ens, out / "sensitivity.gbt")
    ctx["inputs"] += _data_paths(args)
    ctx["outputs"] = ["pwl.csv", "sensitivity.gbt"]
    print(f"fitted shift curves for {args.date}: {sum(p.n_segments for p in pwl)} segments over 24 hours")


def cmd_optimize(args, cfg, ctx):
    _, btc = cfg
    ds = _load(args)
    day = _parse_day(args.date)
    hist = _before(ds, day)
    model = load_model(args.spread_model)
    feats, hours = _day_features(ds, day, btc.lookback if model.kind == "lstm" else 0)
    E = predict_spread(model, feats, hours).values
    N = ds.panel.n_nodes
    if hist.panel.n_hours < 24 * btc.n_samples:
        raise DataError(f"need {btc.n_samples} days of history before {args.date}")
    samples = hist.panel.spread[:, -24 * btc.n_samples:].reshape(N, btc.n_samples, 24).transpose(2, 1, 0)
    ctx["inputs"] = _data_paths(args) + [args.spread_model]
    if args.pwl:
        pwl = read_pwl_csv(args.pwl)
        ctx["inputs"].append(args.pwl)
    else:
        b = SensitivityBounds.from_history(hist.vbids.net)
        pwl = [flat_pwl(h, max(b.x_lo, -float(N)), min(b.x_hi, float(N))) for h in range(24)]
    if args.mode == "no-ps":
        pwl = [p.flat() for p in pwl]
    budget = args.budget if args.budget is not None else (btc.budget or 0.0)
    risk = args.risk if args.risk is not None else budget * btc.risk_ratio
    inst = PortfolioInstance(E, tuple(pwl), samples, btc.costs, budget, risk, args.beta or btc.beta,
                             exclusive=btc.exclusive, nodes=ds.panel.nodes, hours=tuple(hours))
    sol = solve_branch_and_bound(inst, node_limit=args.node_limit or btc.node_limit, mip_gap=btc.mip_gap)
    rows = ["hour,node_id,side,quantity_mwh\n"] + [f"{format_hour(h)},{n},{s},1\n"
                                                  for h, n, s in sol.decisions(list(ds.panel.nodes), list(hours))]
    out = Path(args.out)
    atomic_write(out / "decisions.csv", "".join(rows))
    summary = {"objective": sol.objective, "bids": sol.n_bids, "collateral": sol.collateral,
               "cvar_total": float(sol.cvar.sum()), "budget_binding": sol.budget_binding,
               "risk_binding": sol.risk_binding, "status": sol.status, "nodes": sol.nodes, "gap": sol.gap}
    atomic_write(out / "solution.txt", "".join(f"{k} = {v}\n" for k, v in summary.items()))
    ctx["outputs"] = ["decisions.csv", "solution.txt"]
    print(f"{sol.n_bids} lots, objective {sol.objective:.4f} ({sol.status}, gap {sol.gap:.2e})")


def cmd_backtest(args, cfg, ctx):
    synth, btc = cfg
    if args.scenario:
        btc = dataclasses.replace(btc, scenario=args.scenario.replace("-", "_"))
    if args.data or args.lmp:
        ds = _load(args)
        ctx["inputs"] = _data_paths(args)
    else:
        ds = generate_synthetic_market(synth, args.seed)
    book = bt.build_forecast_book(ds, btc, args.seed)
    results = bt.simulate(book, btc, btc.scenario, workers=args.workers)
    report = bt.report_from_results(book, btc, btc.scenario, btc.share, results)
    out = Path(args.out)
    atomic_write(out / "pnl.csv", bt.pnl_csv(results))
    atomic_write(out / "metrics.txt", bt.metrics_txt(report))
    atomic_write(out / "cumulative.dat", "".join(f"{k} {v:.10g}\n" for k, v in enumerate(report.cumulative_net)))
    ctx["outputs"] = ["pnl.csv", "metrics.txt", "cumulative.dat"]
    if args.sweep:
        pts, flag = bt.efficiency_sweep(ds, btc, args.seed, book=book, workers=args.workers)
        atomic_write(out / "curves.csv", bt.curves_csv(pts))
        ctx["outputs"].append("curves.csv")
        print(f"profit per dollar non-increasing in share: {flag}")
    print(f"{btc.scenario}: {len(results)} days, net {report.total_net:.2f}, "
          f"profit per dollar {report.profit_per_dollar:.4f}")


def cmd_report(args, cfg, ctx):
    m = RunManifest.read(args.run)
    bad = m.verify(args.run)
    if bad:
        raise DataError(f"digest mismatch: {', '.join(bad)}")
    print(f"manifest ok: {m.command} (seed {m.seed}, config {m.config_hash[:12]}, version {m.tool_version})")
    metrics = Path(args.run) / "metrics.txt"
    if metrics.exists():
        sys.stdout.write(metrics.read_text())
    ctx["no_manifest"] = True


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="vbid", description="Virtual bidding: forecasting, price sensitivity, CVaR portfolios, backtests.",
                epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"vbid {tool_version()}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file (see vbid --help)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    data = _Parser(add_help=False)
    data.add_argument("--data", help="directory with lmp.csv, features.csv, vbids.csv")
    data.add_argument("--lmp")
    data.add_argument("--features")
    data.add_argument("--vbids")
    data.add_argument("--ref-node", help="reference node id (default: first node)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common, data], help="validate and normalize CSV inputs")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic market")
    s.add_argument("--days", type=int)
    s.add_argument("--nodes", type=int)
    s.set_defaults(fn=cmd_synth)

    for name, fn in (("train-spread", cmd_train_spread), ("train-quantity", cmd_train_quantity)):
        s = sub.add_parser(name, parents=[common, data], help=f"train the {name.split('-')[1]} forecaster")
        s.add_argument("--model", "--kind", dest="kind", choices=("mlp", "lstm"), default="mlp")
        s.add_argument("--until", help="train on hours before this date (YYYY-MM-DD)")
        s.set_defaults(fn=fn)

    s = sub.add_parser("fit-sensitivity", parents=[common, data], help="fit hourly shift curves for one day")
    s.add_argument("--date", required=True)
    s.add_argument("--quantity-model")
    s.set_defaults(fn=cmd_fit_sensitivity)

    s = sub.add_parser("optimize", parents=[common, data], help="choose one day's lots")
    s.add_argument("--date", required=True)
    s.add_argument("--spread-model", required=True)
    s.add_argument("--pwl")
    s.add_argument("--budget", type=float)
    s.add_argument("--risk", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--mode", choices=("full-ps", "no-ps"), default="full-ps")
    s.add_argument("--node-limit", type=int)
    s.set_defaults(fn=cmd_optimize)

    s = sub.add_parser("backtest", parents=[common, data],
                       help="rolling backtest (on a synthetic market when no data is given)")
    s.add_argument("--scenario", choices=("no-ps", "partial-ps", "full-ps"))
    s.add_argument("--sweep", action="store_true", help="also run the market-share sweep (curves.csv)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_backtest)

    s = sub.add_parser("report", help="verify a run directory and print its metrics")
    s.add_argument("--run", required=True)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(fn=cmd_report, config=None, seed=None, out=None)
    return p


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    ctx = {"inputs": [], "outputs": []}
    try:
        mapping = load_config(args.config) if args.config else {}
        cfg = split_config(mapping)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        args.fn(args, cfg, ctx)
        if not ctx.get("no_manifest"):
            inputs = {str(p): file_digest(p) for p in ctx["inputs"] + ([args.config] if args.config else [])}
            outputs = {n: file_digest(Path(args.out) / n) for n in ctx["outputs"]}
            RunManifest(args.command, config_hash(mapping), args.seed, inputs, outputs, tool_version(),
                        round(time.perf_counter() - t0, 3)).write(args.out)
    except VbidError as exc:
        print(f"vbid {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"vbid {args.command}: FileNotFound: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"vbid {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
