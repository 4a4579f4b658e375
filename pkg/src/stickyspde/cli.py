"""Command line experiment runner.

Each subcommand runs `replicates` independent replicates keyed by
SeedSpec(seed, i), writes one CSV row per replicate (or per excursion /
per alpha), a metric,value summary and a key,value manifest, and exits with

    0  all gates passed
    2  configuration error
    3  a gate failed

Settings come from a flat key=value file (--config) and are overridden by
flags.  Results do not depend on --workers.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import StickySPDEError
from .noise import SeedSpec

EXIT_OK, EXIT_CONFIG, EXIT_GATE = 0, 2, 3

SUBCOMMANDS = ("simulate-spde", "couple", "signed-excursions", "sde-sticky",
               "girsanov-survival", "lemma-check")


@dataclasses.dataclass
class ExperimentConfig:
    subcommand: str
    seed: int = 0
    replicates: int = 100
    out: str = "out"
    L: float = 10.0
    n_cells: int = 512
    ratio: float = 0.25
    dt: float = 0.0            # 0 -> ratio * dx^2
    p: float = 0.25
    b: float = 1.0
    eps: float = 0.05
    x0: float = 0.3
    k: float = 8.0
    q: float = 0.25
    t_end: float = 1.0
    scheme: str = "exact"
    mode: str = "hitting"
    x_start: float = 0.1
    x_target: float = 1.0
    driver_dt: float = 1e-6
    clock_step: float = math.inf
    y0: float = 1.0
    T: str = "4,16,64,256"
    euler_dt: float = 0.01
    horizon: float = 64.0

    def T_list(self) -> list[float]:
        return [float(v) for v in self.T.split(",") if v.strip()]


DEFAULTS = {
    "simulate-spde": {},
    "couple": {"L": 8.0, "n_cells": 256, "replicates": 500},
    "signed-excursions": {"L": 8.0, "n_cells": 256, "eps": 0.1, "replicates": 200},
    "sde-sticky": {"replicates": 1000},
    "girsanov-survival": {"replicates": 10000},
    "lemma-check": {"replicates": 1000},
}

# stable CSV columns per subcommand
COLUMNS = {
    "simulate-spde": ["replicate", "mass", "sup", "holder14", "zero_time", "ineq_checks", "ineq_violations"],
    "couple": ["replicate", "outcome", "separated_first", "n_excursions", "t_end", "vk8", "vk16", "vk32",
               "tau_prime_max", "ledger_max", "dominance_min", "violation_fraction",
               "tau_prime_active"],
    "signed-excursions": ["replicate", "escaped", "excursion_count", "escape_time"],
    "sde-sticky": ["replicate", "hit", "hit_time", "final_value", "occupation", "local_time", "elapsed"],
    "girsanov-survival": ["replicate", "absorption_time", "scaled_absorption_time"],
    "lemma-check": ["replicate", "alpha", "C", "halfwidth", "lhs", "rhs", "ratio", "holds", "scaled_holds"],
}


def _coerce(name: str, text: str):
    f = {f.name: f for f in dataclasses.fields(ExperimentConfig)}.get(name)
    if f is None:
        raise StickySPDEError(f"unknown setting '{name}'")
    kind = type(getattr(ExperimentConfig("x"), name))
    try:
        return kind(float(text)) if kind is int else kind(text)
    except ValueError:
        raise StickySPDEError(f"setting '{name}' expects {kind.__name__}, got '{text}'") from None


def read_config_file(path: str) -> dict:
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StickySPDEError(f"{path}:{ln}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, val)
    return out


# ---------------------------------------------------------------- workers

def _grid(cfg: ExperimentConfig):
    from .heat_spde import GridSpec
    g = GridSpec(halfwidth=cfg.L, n_cells=cfg.n_cells, ratio=cfg.ratio)
    return g.with_dt(cfg.dt) if cfg.dt > 0 else g


def validate(cfg: ExperimentConfig):
    """Raise on any violated precondition before work starts."""
    from .coupling import check_separation_params
    from .sde1d import ScaleFn
    if cfg.subcommand not in SUBCOMMANDS:
        raise StickySPDEError(f"unknown subcommand {cfg.subcommand}")
    if cfg.replicates < 1:
        raise StickySPDEError("replicates must be at least 1")
    SeedSpec(cfg.seed)
    sc = cfg.subcommand
    if sc in ("simulate-spde", "couple", "signed-excursions"):
        _grid(cfg)
        if not 0 < cfg.p <= 0.5 or (sc != "simulate-spde" and cfg.p >= 0.5):
            raise StickySPDEError(f"p = {cfg.p} outside (0, 1/2)")
        if cfg.scheme not in ("exact", "euler"):
            raise StickySPDEError("scheme must be 'exact' or 'euler'")
    if sc == "couple":
        check_separation_params(cfg.eps, cfg.b, cfg.x0)
    if sc == "signed-excursions" and not 0 < cfg.eps < 1:
        raise StickySPDEError("eps must lie in (0, 1)")
    if sc == "sde-sticky":
        ScaleFn(cfg.b, cfg.q, 1.0)
        if cfg.mode not in ("hitting", "occupation"):
            raise StickySPDEError("mode must be 'hitting' or 'occupation'")
        if cfg.mode == "hitting" and not 0 <= cfg.x_start < cfg.x_target:
            raise StickySPDEError("hitting needs 0 <= x_start < x_target")
    if sc == "girsanov-survival":
        if not 0 < cfg.q < 0.5 or cfg.y0 <= 0 or not cfg.T_list():
            raise StickySPDEError("girsanov-survival needs q in (0, 1/2), y0 > 0 and a nonempty T list")
    if sc in ("couple", "simulate-spde") and cfg.b <= 0:
        raise StickySPDEError("b must be positive")


def _rows_simulate(cfg, idx):
    from .heat_spde import SourceFn, simulate_spde
    run = simulate_spde(SeedSpec(cfg.seed, idx), _grid(cfg), cfg.p, cfg.t_end, src=SourceFn(b=cfg.b),
                        scheme=cfg.scheme, record_every=cfg.t_end / 4)
    return [[idx, run.mass[-1], run.sup[-1], run.holder14[-1], run.zero_time,
             run.inequality_checks, run.inequality_violations]]


def _rows_couple(cfg, idx):
    from .coupling import CouplingModel, run_separation_trial
    from .heat_spde import SourceFn
    src = SourceFn(b=cfg.b)
    key = (cfg.L, cfg.n_cells, cfg.ratio, cfg.dt, cfg.eps, cfg.p, cfg.b, cfg.scheme)
    model = _model_cache.get(key)
    if model is None:
        model = _model_cache.setdefault(key, CouplingModel(_grid(cfg), cfg.eps, cfg.p, src, cfg.scheme))
    r = run_separation_trial(SeedSpec(cfg.seed, idx), cfg.eps, cfg.p, cfg.x0, _grid(cfg), src=src,
                             model=model)
    return [[idx, r.outcome, int(r.separated_first), r.n_excursions, r.t_end,
             int(r.vk_flags[8.0]), int(r.vk_flags[16.0]), int(r.vk_flags[32.0]),
             max(r.tau_prime_max.values()), r.ledger_max, r.dominance_min, r.violation_fraction,
             max(r.tau_prime_active.values())]]


_model_cache: dict = {}


def _rows_signed(cfg, idx):
    from .coupling import run_signed_excursions
    r = run_signed_excursions(SeedSpec(cfg.seed, idx), cfg.eps, cfg.p, cfg.horizon, _grid(cfg))
    return [[idx, int(r.escaped), r.excursion_count, r.escape_time]]


def _rows_sticky(cfg, idx):
    from .sde1d import ScaleFn, SpeedMeasure, simulate_sticky_exact
    m = SpeedMeasure(ScaleFn(cfg.b, cfg.q, 1.0))
    seed = SeedSpec(cfg.seed, idx)
    if cfg.mode == "hitting":
        ps = simulate_sticky_exact(seed, m, cfg.x_start, math.inf, cfg.driver_dt, target=cfg.x_target,
                                   stop_at_zero=True, clock_step=math.inf)
        ht = ps.hit_times[cfg.x_target]
        return [[idx, int(not math.isnan(ht)), ht, ps.final_value, ps.occupation_time_at_zero,
                 ps.local_time_driver, ps.elapsed]]
    ps = simulate_sticky_exact(seed, m, cfg.x_start, cfg.t_end, cfg.driver_dt, clock_step=cfg.clock_step)
    return [[idx, 0, math.nan, ps.final_value, ps.occupation_time_at_zero, ps.local_time_driver, ps.elapsed]]


SCALED_OFFSET = 1 << 40
SCALE_C = 2.0


def _rows_girsanov(cfg, idx):
    from .sde1d import absorption_time
    t_max = max(cfg.T_list())
    t = absorption_time(SeedSpec(cfg.seed, idx), cfg.q, cfg.y0, t_max, cfg.euler_dt)
    # start at c*y0 on an independent stream; T0 rescales by c^(2-2q)
    f = SCALE_C ** (2.0 - 2.0 * cfg.q)
    t2 = absorption_time(SeedSpec(cfg.seed, SCALED_OFFSET + idx), cfg.q, SCALE_C * cfg.y0, t_max * f,
                         cfg.euler_dt)
    return [[idx, t, t2 / f]]


def _rows_lemma(cfg, idx):
    from .holder_lemma import suite_case
    return [[idx, r.alpha, r.C, r.halfwidth, r.lhs, r.rhs, r.ratio, int(r.holds), int(r.scaled_holds)]
            for r in suite_case(SeedSpec(cfg.seed, idx))]


ROWS = {"simulate-spde": _rows_simulate, "couple": _rows_couple, "signed-excursions": _rows_signed,
        "sde-sticky": _rows_sticky, "girsanov-survival": _rows_girsanov, "lemma-check": _rows_lemma}


def _work(args):
    cfg, lo, hi = args
    fn = ROWS[cfg.subcommand]
    return [row for i in range(lo, hi) for row in fn(cfg, i)]


def collect(cfg: ExperimentConfig, workers: int = 1) -> list[list]:
    """All rows in replicate order, independent of the worker count."""
    n = cfg.replicates
    size = max(1, min(64, math.ceil(n / max(1, workers) / 4)))
    jobs = [(cfg, lo, min(n, lo + size)) for lo in range(0, n, size)]
    if workers <= 1:
        parts = map(_work, jobs)
        return [r for part in parts for r in part]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return [r for part in ex.map(_work, jobs) for r in part]


# ---------------------------------------------------------------- summaries and gates

def summarize(cfg: ExperimentConfig, rows: list[list]) -> tuple[list[tuple], bool]:
    """(metric, value) pairs and whether every gate passed."""
    from .stats import aggregate, ks_distance, loglog_slope, wilson_interval
    sc = cfg.subcommand
    out: list[tuple] = [("replicates", cfg.replicates)]
    ok = True
    if sc == "lemma-check":
        holds = np.array([r[7] for r in rows])
        agree = np.array([r[7] == r[8] for r in rows])
        viol = int((holds == 0).sum())
        out += [("checks", len(rows)), ("violations", viol), ("scaling_agreement", int(agree.sum())),
                ("min_ratio", min(r[6] for r in rows))]
        ok = viol == 0 and bool(agree.all())
    elif sc == "simulate-spde":
        res = aggregate([r[1] for r in rows])
        viol = sum(r[6] for r in rows)
        out += [("mean_mass", res.mean), ("stderr", res.stderr), ("target", cfg.b * cfg.t_end),
                ("field_checks", sum(r[5] for r in rows)), ("field_violations", viol)]
        ok = viol == 0 and (cfg.replicates < 2 or res.within(cfg.b * cfg.t_end, 3.0))
    elif sc == "couple":
        sep = sum(r[2] for r in rows)
        w = wilson_interval(sep, len(rows))
        rates = [sum(r[c] for r in rows) / len(rows) for c in (5, 6, 7)]
        tau = max(r[8] for r in rows)
        out += [("separated_first", sep), ("p_hat", w.estimate), ("ci_low", w.low), ("ci_high", w.high),
                ("budget_outcomes", sum(r[1] == "budget" for r in rows)),
                ("vk_rate_8", rates[0]), ("vk_rate_16", rates[1]), ("vk_rate_32", rates[2]),
                ("tau_prime_max", tau), ("tau_prime_active_max", max(r[12] for r in rows)),
                ("ledger_max", max(r[9] for r in rows)),
                ("dominance_min", min(r[10] for r in rows)), ("violation_fraction_max", max(r[11] for r in rows))]
        ok = (tau <= 1 + 1e-3 and max(r[9] for r in rows) <= cfg.eps * (1 + 1e-9)
              and rates[0] >= rates[1] >= rates[2] and max(r[11] for r in rows) < 1e-3)
    elif sc == "signed-excursions":
        esc = [r for r in rows if r[1]]
        out += [("escaped", len(esc)), ("escape_fraction", len(esc) / len(rows)),
                ("mean_excursion_count", float(np.mean([r[2] for r in rows])))]
        if esc:
            out.append(("mean_count_escaped", float(np.mean([r[2] for r in esc]))))
        ok = all(r[2] >= 1 for r in rows)
    elif sc == "sde-sticky":
        from .sde1d import ScaleFn, scale_eval
        if cfg.mode == "hitting":
            s = ScaleFn(cfg.b, cfg.q, 1.0)
            target = scale_eval(s, cfg.x_start) / scale_eval(s, cfg.x_target)
            hits = sum(r[1] for r in rows)
            w = wilson_interval(hits, len(rows))
            se = math.sqrt(max(target * (1 - target), 1e-300) / len(rows))
            out += [("hits", hits), ("p_hat", w.estimate), ("p_exact", target), ("stderr", se)]
            ok = abs(w.estimate - target) <= 3 * se
        else:
            occ = np.array([r[4] for r in rows], dtype=float)
            lt = np.array([r[5] for r in rows], dtype=float)
            res = aggregate(occ / cfg.t_end)
            gap = float(np.abs(cfg.b * occ - lt).max())
            out += [("occupation_fraction", res.mean), ("ci_low", res.ci95[0]), ("ci_high", res.ci95[1]),
                    ("identity_gap", gap)]
            ok = res.ci95[0] > 0 and gap <= 1e-9 * max(1.0, float(lt.max()))
    elif sc == "girsanov-survival":
        from .sde1d import survival_exact
        times = np.array([r[1] for r in rows], dtype=float)
        T = np.array(sorted(cfg.T_list()))
        surv = np.array([(times > t).mean() for t in T])
        exact = survival_exact(cfg.q, cfg.y0, T)
        for t, sv, ex in zip(T, surv, exact):
            out += [(f"survival_T{t:g}", sv), (f"exact_T{t:g}", ex)]
        target = -1.0 / (2.0 * (1.0 - cfg.q))
        if np.all(surv > 0) and len(T) >= 2:
            fit = loglog_slope(T, surv)
            out += [("slope", fit.slope), ("slope_stderr", fit.stderr), ("slope_target", target)]
            ok = abs(fit.slope - target) <= 0.1
        else:
            out.append(("slope", math.nan))
            ok = False
        scaled = np.array([r[2] for r in rows], dtype=float)
        if len(rows) >= 10:
            cens = max(T)
            ks = ks_distance(np.minimum(times, cens), np.minimum(scaled, cens))
            out += [("ks_statistic", ks.statistic), ("ks_pvalue", ks.pvalue)]
            ok = ok and ks.passed
    return out, ok


def build_id() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                           text=True, cwd=Path(__file__).resolve().parent, timeout=10)
        if r.returncode == 0 and r.stdout.strip():
            return r.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return f"v{__version__}"


def manifest(cfg: ExperimentConfig) -> list[tuple]:
    from .holder_lemma import ral_constant
    from .sde1d import epsilon_ledger, p_prime
    rows = [("build_id", build_id())]
    rows += [(f"config.{k}", v) for k, v in dataclasses.asdict(cfg).items()]
    if 0 < cfg.p < 0.5 and cfg.b > 0 and cfg.k > 0:
        led = epsilon_ledger(cfg.b, cfg.p, cfg.k)
        rows += [("p_prime", p_prime(cfg.p)), ("K_k", ral_constant(0.25, cfg.k)),
                 ("log_s_k_1", led.log_sk1), ("s_k_1", led.sk1), ("eps0", led.eps0), ("x0_bound", led.x0_max)]
    if cfg.subcommand in ("simulate-spde", "couple", "signed-excursions"):
        g = _grid(cfg)
        if cfg.subcommand == "couple":
            g = g.aligned(cfg.eps)
        rows += [("grid.dx", g.dx), ("grid.dt", g.dt)]
    return rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def run(cfg: ExperimentConfig, workers: int = 1, stream=sys.stdout) -> int:
    try:
        validate(cfg)
    except (StickySPDEError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.subcommand.replace("-", "_")
    rows = collect(cfg, workers)
    summary, ok = summarize(cfg, rows)
    write_csv(out / f"{stem}.csv", COLUMNS[cfg.subcommand], rows)
    write_csv(out / f"{stem}_summary.csv", ["metric", "value"], summary)
    write_csv(out / f"{stem}_manifest.csv", ["key", "value"], manifest(cfg))
    for k, v in summary:
        print(f"{k},{_fmt(v)}", file=stream)
    print(f"gates,{'pass' if ok else 'fail'}", file=stream)
    return EXIT_OK if ok else EXIT_GATE


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stickyspde", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicates", type=int)
        if name == "lemma-check":
            sp.add_argument("--seeds", type=int, dest="replicates")
        sp.add_argument("--out")
        sp.add_argument("--config", help="flat key=value file")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any setting")
        for f in dataclasses.fields(ExperimentConfig):
            if f.name in ("subcommand", "seed", "replicates", "out"):
                continue
            sp.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name)
    return ap


def config_from_args(ns) -> ExperimentConfig:
    values = dict(DEFAULTS[ns.subcommand])
    if ns.config:
        values.update(read_config_file(ns.config))
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(ns, f.name, None)
        if f.name != "subcommand" and v is not None:
            values[f.name] = _coerce(f.name, str(v))
    for item in ns.set:
        if "=" not in item:
            raise StickySPDEError(f"--set expects KEY=VALUE, got '{item}'")
        k, v = item.split("=", 1)
        values[k.strip()] = _coerce(k.strip(), v.strip())
    values.pop("subcommand", None)
    return ExperimentConfig(ns.subcommand, **values)


def main(argv=None) -> int:
    ns = make_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (StickySPDEError, ValueError, OSError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, workers=max(1, ns.workers))


if __name__ == "__main__":
    sys.exit(main())
