"""Command line entry point: ``menu-forge <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import harness
from .cover import EnumerationTooLarge, LotteryCoverParams, TariffCoverParams, enumerate_lottery_cover, enumerate_tariff_cover
from .harness import EXIT_CAP, EXIT_CONFIG, EXIT_OK, ConfigError

LEARNER_OF = {
    "online": "wm",
    "bandit": "exp3",
    "limited": "limited",
    "semibandit": "semibandit",
    "distributional": "erm",
}

# flag dest -> config key
_FLAG_KEYS = {
    "family": "family",
    "ell": "ell",
    "K": "K",
    "m": "m",
    "H": "H",
    "demand": "demand",
    "T": "T",
    "N": "N",
    "alpha": "alpha",
    "beta": "beta",
    "gamma": "gamma",
    "delta": "delta",
    "levels_K": "levels_K",
    "epsilon": "epsilon",
    "conf_delta": "conf_delta",
    "C": "C",
    "lambda_step": "lambda_step",
    "types_path": "types_path",
    "seed": "seed",
    "output": "output",
}


def _dims(p: argparse.ArgumentParser) -> None:
    # every default is None so that only flags given on the command line override --config
    p.add_argument("--family", choices=harness.FAMILIES)
    p.add_argument("--ell", type=int, help="menu length")
    p.add_argument("-K", dest="K", type=int, help="units (tariffs)")
    p.add_argument("-m", dest="m", type=int, help="items (lotteries)")
    p.add_argument("-H", dest="H", type=float, help="valuation cap")
    p.add_argument("--demand", choices=("additive", "unit_demand"))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags given here override it")
    _dims(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="inclusive seed range a..b, one output file per seed")
    p.add_argument("--workers", type=int, default=1, help="process pool size for --seeds")
    p.add_argument("-o", "--output", help="output path (stdout when omitted)")
    p.add_argument("--adversary", choices=harness.ADVERSARIES)
    p.add_argument("--density", help="density name or JSON object, e.g. triangular_down")
    p.add_argument("--adversary-file", help="JSON-lines valuations for fixed_sequence")
    p.add_argument("--shared", type=float, help="shared-component mixing weight for item draws")


def _online(p: argparse.ArgumentParser) -> None:
    _common(p)
    p.add_argument("-T", dest="T", type=int, help="rounds")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float, help="lottery price-level ratio")
    p.add_argument("--levels-K", dest="levels_K", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="menu-forge", description="Learn revenue-maximising tariff and lottery menus.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cover", help="print cover sizes, optionally dump menus as JSON lines")
    _dims(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--levels-K", dest="levels_K", type=int, default=1)
    p.add_argument("--dump", help="write every menu to this JSON-lines file")

    _online(sub.add_parser("online", help="weighted majority over a cover (full feedback)"))
    _online(sub.add_parser("bandit", help="Exp3 over a cover (revenue of the played menu only)"))

    p = sub.add_parser("limited", help="bandit learning with a known finite set of buyer types")
    _common(p)
    p.add_argument("--types", dest="types_path", help="JSON file holding the type list")
    p.add_argument("-T", dest="T", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("-C", dest="C", type=float, help="spanner approximation factor")
    p.add_argument("--beta", type=float)

    p = sub.add_parser("semibandit", help="exponential weights with choice-region feedback")
    _common(p)
    p.add_argument("-T", dest="T", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambda_step", type=float)

    p = sub.add_parser("distributional", help="empirical revenue maximisation over a cover")
    _common(p)
    p.add_argument("-N", dest="N", type=int, help="sample count (derived from epsilon, delta when omitted)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", dest="conf_delta", type=float, help="failure probability")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("dispersion", help="dispersion measurements")
    p.add_argument("subcase", choices=("tariff-splits", "lottery-failure", "semibandit"))
    p.add_argument("--config")
    _dims(p)
    p.add_argument("-T", dest="T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output")
    p.add_argument("--density")
    p.add_argument("--adversary", choices=harness.ADVERSARIES)
    p.add_argument("--adversary-file")
    p.add_argument("--shared", type=float)
    p.add_argument("--w", type=float, help="largest ball radius (tariff-splits)")
    p.add_argument("--trials", type=int)
    p.add_argument("-c", dest="c", type=float, help="dispersion constant (lottery-failure)")
    p.add_argument("-L", dest="L", type=float, help="Lipschitz constant (lottery-failure)")
    p.add_argument("--epsilons", help="comma separated epsilon schedule (lottery-failure)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambda_step", type=float)
    return parser


def _density(raw: str) -> dict:
    raw = raw.strip()
    return json.loads(raw) if raw.startswith("{") else {"name": raw}


def _overrides(args: argparse.Namespace, base: dict[str, Any]) -> dict[str, Any]:
    out = {key: getattr(args, dest) for dest, key in _FLAG_KEYS.items() if getattr(args, dest, None) is not None}
    adv = dict(base.get("adversary") or {"kind": "iid", "density": {"name": "uniform"}})
    if getattr(args, "adversary", None):
        adv["kind"] = args.adversary
    if getattr(args, "density", None):
        adv["density"] = _density(args.density)
    if getattr(args, "adversary_file", None):
        adv["path"] = args.adversary_file
        if not getattr(args, "adversary", None):
            adv["kind"] = "fixed_sequence"
    if getattr(args, "shared", None) is not None:
        adv["shared"] = args.shared
    out["adversary"] = adv
    return out


def _base(args: argparse.Namespace) -> dict[str, Any]:
    if not getattr(args, "config", None):
        return {}
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _cover(args: argparse.Namespace) -> int:
    family = args.family or "tariff"
    ell = args.ell or 1
    H = args.H or 1.0
    if family == "tariff":
        params = TariffCoverParams(args.alpha, H, args.K or 1, ell)
        print(f"tariff cover: grid={len(params.grid())} menus={params.count}")
        menus = enumerate_tariff_cover(params) if args.dump else None
    else:
        lp = LotteryCoverParams(args.alpha, args.delta, args.levels_K, args.m or 1, H, ell)
        print(f"lottery cover: allocations={len(lp.allocation_grid())} prices={len(lp.price_grid())} menus={lp.count}")
        menus = enumerate_lottery_cover(lp) if args.dump else None
    if menus is not None:
        with open(args.dump, "w", newline="\n") as fh:
            for menu in menus:
                fh.write(json.dumps(menu.to_json()) + "\n")
    return EXIT_OK


def _dispersion(args: argparse.Namespace, base: dict[str, Any]) -> int:
    if args.subcase == "semibandit":
        raw = dict(base, **_overrides(args, base), learner="semibandit", family="tariff")
        if args.T is None and "T" not in raw:
            raw["T"] = 1000
        return _dispatch(args, raw)
    opts = dict(base)
    for key in ("ell", "K", "H", "T", "seed", "w", "trials", "c", "L"):
        if getattr(args, key, None) is not None:
            opts[key] = getattr(args, key)
    if args.density:
        opts["density"] = _density(args.density)
    if args.epsilons:
        opts["epsilons"] = [float(x) for x in args.epsilons.split(",")]
    seeds = harness.parse_seeds(args.seeds) if args.seeds else [opts.get("seed", 0)]
    for s in seeds:
        text = harness.dispersion_table(args.subcase, dict(opts, seed=s))
        out = harness.seeded_output(args.output, s) if args.seeds else args.output
        if out:
            Path(out).write_text(text)
            meta = {
                "options": dict(opts, seed=s),
                "note": "multi-unit values are sorted i.i.d. draws; pairwise joint densities are bounded only up to a K-dependent factor",
            }
            harness.sidecar_path(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        else:
            sys.stdout.write(text)
    return EXIT_OK


def _dispatch(args: argparse.Namespace, raw: dict[str, Any]) -> int:
    cfg = harness.ExperimentConfig.from_dict(raw)
    if args.seeds:
        return harness.run_sweep(cfg, harness.parse_seeds(args.seeds), args.workers)
    return harness.run_experiment(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "cover":
            return _cover(args)
        base = _base(args)
        if args.command == "dispersion":
            return _dispersion(args, base)
        raw = dict(base, **_overrides(args, base), learner=LEARNER_OF[args.command])
        return _dispatch(args, raw)
    except EnumerationTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
