"""Experiment configuration, valuation streams, and reproducible runs with CSV output."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterator

import numpy as np

from .cover import (
    EnumerationTooLarge,
    LotteryCoverParams,
    TariffCoverParams,
    lottery_cover_array,
    tariff_cover_array,
)
from .dispersion_lab import (
    BoundedDensity,
    DispersionParams,
    draw_item_valuations,
    draw_unit_valuations,
    lottery_dispersion_failure,
    run_semibandit_exp3set,
    tariff_dispersion_experiment,
)
from .distributional import erm_over_cover, sample_complexity_lottery, sample_complexity_tariff, tariff_erm_params
from .experts import RegretTrace, default_bandit_params, default_full_info_params, fmt, run_bandit, run_full_information
from .limited_types import run_limited_bandit
from .mechanisms import Valuation, valuation_from_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3

LEARNERS = ("wm", "exp3", "limited", "semibandit", "erm")
FAMILIES = ("tariff", "lottery")
ADVERSARIES = ("iid", "fixed_sequence", "cyclic")


class ConfigError(ValueError):
    pass


class AdversaryExhausted(ValueError):
    pass


@dataclass
class ExperimentConfig:
    learner: str
    family: str = "tariff"
    ell: int = 1
    K: int = 1
    m: int = 1
    H: float = 1.0
    demand: str = "additive"
    T: int | None = None
    N: int | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    delta: float | None = None
    levels_K: int | None = None
    epsilon: float | None = None
    conf_delta: float | None = None
    C: float = 2.0
    lambda_step: float | None = None
    adversary: dict = field(default_factory=lambda: {"kind": "iid", "density": {"name": "uniform"}})
    types: list | None = None
    types_path: str | None = None
    seed: int = 0
    output: str | None = None

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "learner" not in raw:
            raise ConfigError("config needs a learner")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        for name in ("ell", "K", "m"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not (isinstance(self.H, (int, float)) and self.H > 0):
            raise ConfigError(f"H must be positive, got {self.H!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit nonnegative integer, got {self.seed!r}")
        if self.learner != "erm" and (not isinstance(self.T, int) or self.T < 1):
            raise ConfigError(f"T must be a positive integer, got {self.T!r}")
        if self.learner == "semibandit" and self.family != "tariff":
            raise ConfigError("the semi-bandit learner supports tariffs only")
        if self.learner == "erm" and self.N is None and self.epsilon is None:
            raise ConfigError("erm needs N or epsilon")
        kind = self.adversary.get("kind") if isinstance(self.adversary, dict) else None
        if kind not in ADVERSARIES:
            raise ConfigError(f"adversary kind must be one of {ADVERSARIES}, got {kind!r}")
        if kind == "fixed_sequence" and not Path(self.adversary.get("path", "")).is_file():
            raise ConfigError(f"adversary file not found: {self.adversary.get('path')!r}")
        if self.types_path is not None and not Path(self.types_path).is_file():
            raise ConfigError(f"types file not found: {self.types_path!r}")
        if self.learner == "limited" and self.types is None and self.types_path is None:
            raise ConfigError("limited learner needs types or types_path")

    @property
    def payoff_cap(self) -> float:
        return self.H * (self.m if self.family == "lottery" else 1)


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# Valuation streams


def streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (adversary, learner) generators derived from one seed."""
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def _read_valuations(path: str) -> list[Valuation]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(valuation_from_json(json.loads(line)))
    return out


def load_types(cfg: ExperimentConfig) -> list[Valuation]:
    if cfg.types is not None:
        return [valuation_from_json(v) for v in cfg.types]
    text = Path(cfg.types_path).read_text().strip()
    if text.startswith("[") or text.startswith("{"):
        try:
            obj = json.loads(text)
            items = obj["types"] if isinstance(obj, dict) else obj
            return [valuation_from_json(v) for v in items]
        except json.JSONDecodeError:
            pass
    return _read_valuations(cfg.types_path)


def _exhausting(vals: list[Valuation]) -> Iterator[Valuation]:
    yield from vals
    raise AdversaryExhausted(f"fixed sequence exhausted after {len(vals)} valuations")


def generate_adversary(cfg: ExperimentConfig) -> Iterator[Valuation]:
    """Deterministic valuation stream for the configured adversary."""
    adv = cfg.adversary
    kind = adv["kind"]
    if kind == "fixed_sequence":
        return _exhausting(_read_valuations(adv["path"]))
    if kind == "cyclic":
        vals = [valuation_from_json(v) for v in adv.get("types") or cfg.types or []]
        if not vals:
            raise ConfigError("cyclic adversary needs a nonempty type list")

        def cycle() -> Iterator[Valuation]:
            while True:
                yield from vals

        return cycle()
    density = BoundedDensity.from_json(adv.get("density", {"name": "uniform"}))
    rng, _ = streams(cfg.seed)

    def iid() -> Iterator[Valuation]:
        while True:
            if cfg.family == "tariff":
                yield from draw_unit_valuations(density, 1024, cfg.K, cfg.H, rng)
            else:
                yield from draw_item_valuations(density, 1024, cfg.m, cfg.H, rng, cfg.demand, adv.get("shared", 0.0))

    return iid()


# ---------------------------------------------------------------------------
# Runs


def build_cover(cfg: ExperimentConfig, alpha: float):
    if cfg.family == "tariff":
        return tariff_cover_array(TariffCoverParams(alpha, cfg.H, cfg.K, cfg.ell))
    params = LotteryCoverParams(alpha, cfg.delta or 0.1, cfg.levels_K or 1, cfg.m, cfg.H, cfg.ell)
    cover = lottery_cover_array(params)
    return cover.unit_demand_feasible() if cfg.demand == "unit_demand" else cover


def content_hash(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    echo = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    h.update(json.dumps(echo, sort_keys=True).encode())
    for p in (cfg.adversary.get("path"), cfg.types_path):
        if p:
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def _run(cfg: ExperimentConfig) -> tuple[str, dict[str, Any]]:
    """Execute the configured learner; returns the CSV/JSON payload and metadata extras."""
    _, learner_rng = streams(cfg.seed)
    extra: dict[str, Any] = {}
    if cfg.learner in ("wm", "exp3"):
        T = cfg.T
        defaults = default_full_info_params(T) if cfg.learner == "wm" else default_bandit_params(T, cfg.ell)
        alpha = cfg.alpha if cfg.alpha is not None else defaults["alpha"]
        cover = build_cover(cfg, alpha)
        extra.update(cover_size=len(cover), alpha=alpha)
        adv = generate_adversary(cfg)
        if cfg.learner == "wm":
            trace = run_full_information(cover, adv, T, learner_rng, beta=cfg.beta, payoff_cap=cfg.payoff_cap)
        else:
            trace = run_bandit(cover, adv, T, learner_rng, beta=cfg.beta, gamma=cfg.gamma, payoff_cap=cfg.payoff_cap)
        return _csv(trace), extra
    if cfg.learner == "semibandit":
        alpha = cfg.alpha if cfg.alpha is not None else 1.0 / math.sqrt(cfg.T)
        cover = build_cover(cfg, alpha)
        extra.update(cover_size=len(cover), alpha=alpha)
        trace = run_semibandit_exp3set(generate_adversary(cfg), cfg.T, learner_rng, cover=cover, lambda_step=cfg.lambda_step, H=cfg.H)
        return _csv(trace), extra
    if cfg.learner == "limited":
        types = load_types(cfg)
        eps = cfg.epsilon if cfg.epsilon is not None else 1.0 / (cfg.K * math.sqrt(cfg.T))
        seq = None
        if cfg.adversary["kind"] == "cyclic":
            seq = np.arange(cfg.T) % len(types)
        elif cfg.adversary["kind"] == "fixed_sequence":
            raise ConfigError("limited learner draws types itself; use iid or cyclic")
        res = run_limited_bandit(types, cfg.ell, cfg.T, eps, cfg.seed, type_sequence=seq, C=cfg.C, beta=cfg.beta)
        extra.update(res.summary(), epsilon=eps)
        return _csv(res.trace), extra
    # erm
    eps = cfg.epsilon
    conf = cfg.conf_delta if cfg.conf_delta is not None else 0.1
    if cfg.family == "tariff":
        N = cfg.N if cfg.N is not None else sample_complexity_tariff(eps, conf, cfg.H, cfg.K, cfg.ell)
        params = tariff_erm_params(eps if eps is not None else 0.1, cfg.H, cfg.K, cfg.ell, cfg.alpha)
        cover = tariff_cover_array(params)
    else:
        chain = sample_complexity_lottery(eps if eps is not None else 0.1, conf, cfg.H, cfg.m, cfg.ell)
        N = cfg.N if cfg.N is not None else chain.N
        lp = chain.cover_params(cfg.m, cfg.H, cfg.ell)
        if cfg.alpha is not None:
            lp = dataclasses.replace(lp, alpha=cfg.alpha)
        cover = lottery_cover_array(lp)
    adv = generate_adversary(cfg)
    samples = [next(adv) for _ in range(N)]
    res = erm_over_cover(samples, cover)
    report = {"menu": res.menu.to_json(), "mean_revenue": res.mean_revenue, "N": N, "cover_size": res.cover_size, "index": res.index}
    extra.update(N=N, cover_size=res.cover_size)
    return json.dumps(report, sort_keys=True, indent=2) + "\n", extra


def _csv(trace: RegretTrace) -> str:
    buf = io.StringIO(newline="\n")
    trace.write_csv(buf)
    return buf.getvalue()


def sidecar_path(output: str) -> Path:
    return Path(str(output) + ".meta.json")


def run_experiment(cfg: ExperimentConfig | dict, stdout: IO[str] | None = None, stderr: IO[str] | None = None) -> int:
    """Run one configured experiment; returns the process exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    start = time.perf_counter()
    try:
        if isinstance(cfg, dict):
            cfg = ExperimentConfig.from_dict(cfg)
        payload, extra = _run(cfg)
    except EnumerationTooLarge as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CAP
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    if cfg.output:
        out = Path(cfg.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="\n") as fh:
            fh.write(payload)
        meta = {
            "config": cfg.to_dict(),
            "content_hash": content_hash(cfg),
            "wall_time_s": time.perf_counter() - start,
            **extra,
        }
        sidecar_path(cfg.output).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    else:
        stdout.write(payload)
    return EXIT_OK


def seeded_output(output: str | None, seed: int) -> str | None:
    if output is None:
        return None
    p = Path(output)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


def parse_seeds(spec: str) -> list[int]:
    """``"3"`` or an inclusive range ``"3..7"``."""
    if ".." in spec:
        a, b = spec.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"empty seed range {spec!r}")
        return list(range(lo, hi + 1))
    return [int(spec)]


def _run_dict(raw: dict) -> int:
    return run_experiment(raw)


def run_sweep(cfg: ExperimentConfig, seeds: list[int], workers: int = 1) -> int:
    """One run per seed, each writing its own output file; returns the worst exit code."""
    configs = [dict(cfg.to_dict(), seed=s, output=seeded_output(cfg.output, s)) for s in seeds]
    if workers > 1 and len(configs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_dict, configs))
    else:
        codes = [_run_dict(c) for c in configs]
    return max(codes)


# ---------------------------------------------------------------------------
# Dispersion tables


def dispersion_table(subcase: str, opts: dict[str, Any]) -> str:
    density = BoundedDensity.from_json(opts.get("density") or {"name": "uniform"})
    seed = opts.get("seed", 0)
    lines: list[str] = []
    if subcase == "tariff-splits":
        params = DispersionParams(w=opts.get("w", 0.1), trials=opts.get("trials", 200))
        rows = tariff_dispersion_experiment(params, opts.get("T", 1000), opts.get("ell", 1), opts.get("K", 2), density, seed, H=opts.get("H", 1.0))
        lines.append("w,max_splits,mean_splits")
        lines += [f"{fmt(w)},{mx},{fmt(mean)}" for w, mean, mx in rows]
    elif subcase == "lottery-failure":
        rows = lottery_dispersion_failure(
            opts.get("c", 1.0), opts.get("L", 1.0), opts.get("epsilons") or [0.1, 0.01, 0.001], density, opts.get("trials", 10_000), seed
        )
        lines.append("epsilon,estimate,floor")
        lines += [f"{fmt(r.epsilon)},{fmt(r.estimate)},{fmt(r.floor)}" for r in rows]
    else:
        raise ConfigError(f"unknown dispersion subcase {subcase!r}")
    return "\n".join(lines) + "\n"
