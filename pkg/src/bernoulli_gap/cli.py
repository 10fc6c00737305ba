"""Command-line driver: ``gap-scan``, ``verify``, ``kmc``, ``two-block``, ``congestion``.

Exit codes: 0 pass, 1 certificate failure, 2 usage error, 3 numerical
nonconvergence. Results go to ``--output`` (or the directory named by
``BERNOULLI_GAP_OUTPUT_DIR``, or stdout) as CSV or JSON, preceded by the
resolved configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import (UsageError, default_output_path, load_config_file, parse_count, parse_float_list,
                     parse_int_list, replicate_seeds, resolve)
from .configspace import ConfigSpace
from .disorder import generate_iid, zero_field
from .ensemble import CanonicalMeasure
from .forms import PAIR_CONVENTION
from .kmc import (FrozenStateError, KawasakiKMC, equilibrium_check, fourier_mode, relaxation_time,
                  two_block_statistic)
from .lattice import build_box, congestion
from .spectra import (NonConvergenceError, certify_lemma1, certify_lemma2, certify_thm1,
                      default_n_rule, kawasaki_gap, lemma1_field)

logger = logging.getLogger("bernoulli_gap")

COLUMNS = ["d", "L", "N", "K", "seed", "quantity", "value", "method", "residual"]
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3
ENUMERABLE_LIMIT = 20_000


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)
    passed: bool = True
    nonconverged: bool = False
    summary: list[str] = field(default_factory=list)

    def add(self, quantity: str, value: float, d=None, L=None, N=None, K=None, seed=None,
            method: str = "", residual: float | None = None) -> None:
        self.rows.append({"d": d, "L": L, "N": N, "K": K, "seed": seed, "quantity": quantity,
                          "value": value, "method": method, "residual": residual})

    @property
    def exit_code(self) -> int:
        if self.nonconverged:
            return EXIT_NONCONVERGED
        return EXIT_PASS if self.passed else EXIT_FAIL


def _mapper(workers: int | None) -> tuple[Callable, Any]:
    n = workers if workers is not None else (os.cpu_count() or 1)
    if n <= 1:
        return map, None
    pool = ProcessPoolExecutor(max_workers=n)
    return pool.map, pool


def _seeds(cfg: dict, K: float) -> list[int | None]:
    if K == 0:
        return [None]
    return replicate_seeds(int(cfg["seed"]), max(1, parse_count(cfg["seeds"], "seeds")))


def _n_rule(cfg: dict) -> Callable[[int], int]:
    if cfg.get("N") is None:
        return default_n_rule
    N = parse_count(cfg["N"], "N")
    return lambda n_sites: N


def _field(n_sites: int, K: float, seed: int | None):
    return zero_field(n_sites) if K == 0 or seed is None else generate_iid(n_sites, K, seed)


# --- subcommands -------------------------------------------------------------

def run_gap_scan(cfg: dict) -> Report:
    d = parse_int_list(cfg["d"], "d", 1)[0]
    Ls = parse_int_list(cfg["L"], "L", 1)
    K = parse_float_list(cfg["K"], "K", 0.0)[0]
    seeds = _seeds(cfg, K)
    rule = _n_rule(cfg)
    for L in Ls:
        if not 0 <= rule(L ** d) <= L ** d:
            raise UsageError("N", f"N={rule(L ** d)} does not fit in {L ** d} sites")
    threshold = float(cfg["band_ratio"]) * math.exp(float(cfg["band_ratio_field_exponent"]) * K)
    report = Report()
    mapper, pool = _mapper(cfg.get("workers"))
    try:
        jobs = [(d, L, rule(L ** d), K, s, cfg["method"]) for L in Ls for s in seeds]
        results = list(mapper(_gap_job, jobs))
    finally:
        if pool:
            pool.shutdown()
    values = []
    for (d_, L, N, K_, s, _), (gap, method, residual, err) in sorted(
            zip(jobs, results), key=lambda jr: (jr[0][1], jr[0][2], jr[0][4] or 0)):
        if err:
            report.nonconverged = True
            report.summary.append(f"L={L} N={N} seed={s}: {err} (excluded)")
            report.add("gap", math.nan, d, L, N, K, s, method, residual)
            continue
        if not math.isfinite(gap):
            report.add("gap", math.nan, d, L, N, K, s, "degenerate", 0.0)
            continue
        if residual > float(cfg["residual_tol"]):
            report.nonconverged = True
            report.summary.append(f"L={L} N={N} seed={s}: residual {residual:.2e} (excluded)")
        else:
            values.append(gap * L * L)
        report.add("gap", gap, d, L, N, K, s, method, residual)
        report.add("gap*L^2", gap * L * L, d, L, N, K, s, method, residual)
    if len(set(Ls)) > 1 and values:
        ratio = max(values) / min(values)
        report.passed = ratio <= threshold
        report.add("band_ratio", ratio, d=d, K=K, method=f"threshold={threshold!r}")
        report.summary.append(f"gap*L^2 band ratio {ratio:.4f} (threshold {threshold:.4f}): "
                              f"{'pass' if report.passed else 'FAIL'}")
    return report


def _gap_job(args):
    d, L, N, K, seed, method = args
    geom = build_box(d, L)
    try:
        g = kawasaki_gap(geom, N, _field(geom.n_sites, K, seed), method)
    except NonConvergenceError as exc:
        return math.nan, "iterative", exc.residual, str(exc)
    return g.gap, g.method, g.residual, None


def _lemma2_weights(k: int, seed: int) -> list[tuple[str, np.ndarray]]:
    n = k - 1
    ramp = np.arange(n, 0, -1, dtype=float)
    rng = np.random.default_rng(seed + k)
    return [("uniform", np.full(n, 1.0 / n)),
            ("ramp", ramp / ramp.sum()),
            ("dirichlet", rng.dirichlet(np.ones(n)))]


def run_verify(cfg: dict) -> Report:
    lemma, thm = cfg.get("lemma"), cfg.get("thm")
    if lemma is None and thm is None:
        raise UsageError("lemma", "choose --lemma 1|2 or --thm 1|3")
    report = Report()
    tol = float(cfg["lemma_tolerance"])
    if lemma is not None and int(lemma) == 2:
        for k in parse_int_list(cfg["k"], "k", 2):
            for name, rho in _lemma2_weights(k, int(cfg["seed"])):
                for N in range(1, k):
                    res = certify_lemma2(k, N, rho, tolerance=tol)
                    report.add(f"lemma2[{name}]", res.lambda_max, 1, k, N, 0.0, None, res.method)
                    report.passed &= res.passed
                    if k == 2:
                        report.passed &= abs(res.lambda_max - 1) <= tol
        worst = max(r["value"] for r in report.rows)
        report.summary.append(f"lemma 2: worst lambda_max {worst:.12f} vs bound 1: "
                              f"{'pass' if report.passed else 'FAIL'}")
    elif lemma is not None and int(lemma) == 1:
        Ks = parse_float_list(cfg["K"], "K", 0.0)
        for K in Ks:
            seeds = replicate_seeds(int(cfg["seed"]), parse_count(cfg["seeds"], "seeds")) if K > 0 else [None]
            worst = 0.0
            for L in parse_int_list(cfg["L"], "L", 2):
                for s in seeds:
                    fld = lemma1_field(L, K, s) if s is not None else zero_field(L)
                    for N in range(1, L):
                        res = certify_lemma1(L, N, fld, tolerance=tol)
                        ok = res.passed and (K > 0 or res.lambda_max <= L - 1 + tol)
                        report.passed &= ok
                        worst = max(worst, res.lambda_max / L)
                        report.add("lemma1_lambda_max", res.lambda_max, 1, L, N, K, s, res.method)
                        report.add("lemma1_bound", res.bound, 1, L, N, K, s, "e^(13K)*L")
            report.summary.append(f"lemma 1, K={K}: worst lambda_max/L {worst:.6f} vs e^(13K)="
                                  f"{math.exp(13 * K):.6g}, slack {math.exp(13 * K) / worst:.4g}")
    elif thm is not None and int(thm) == 1:
        sizes = parse_int_list(cfg["sizes"], "sizes", 2)
        for K in parse_float_list(cfg["K"], "K", 0.0):
            seeds = _seeds(cfg, K)
            res = certify_thm1(sizes, K, seeds, _n_rule(cfg),
                               float(cfg["thm1_spread"]) if K == 0 else None, float(cfg["trend_factor"]))
            for r in res.rows:
                report.add("C_emp", r.value, 1, r.L, r.N, K, r.seed, "dense")
            report.add("C_emp_growth", res.growth, K=K, method=f"threshold={cfg['trend_factor']!r}")
            report.add("C_emp_spread", res.spread, K=K)
            report.passed &= res.passed
            report.summary.append(f"theorem 1, K={K}: C_emp per size {res.per_size}, growth {res.growth:.4f}: "
                                  f"{'pass' if res.passed else 'FAIL'}")
    elif thm is not None and int(thm) == 3:
        for K in parse_float_list(cfg["K"], "K", 0.0):
            r = run_gap_scan(dict(cfg, K=K))
            report.rows += r.rows
            report.summary += r.summary
            report.passed &= r.passed
            report.nonconverged |= r.nonconverged
    else:
        raise UsageError("lemma" if lemma is not None else "thm", "unsupported choice")
    return report


_F = {"square": lambda r: r ** 2, "identity": lambda r: r, "constant": lambda r: np.ones_like(r)}
_PHI = {"one": None, "cos": lambda u: np.cos(2 * np.pi * u[:, 0])}


def run_two_block(cfg: dict) -> Report:
    d = parse_int_list(cfg["d"], "d", 1)[0]
    Ls = parse_int_list(cfg["L"], "L", 2)
    K = parse_float_list(cfg["K"], "K", 0.0)[0]
    if cfg["F"] not in _F:
        raise UsageError("F", f"choose one of {sorted(_F)}")
    if cfg["phi"] not in _PHI:
        raise UsageError("phi", f"choose one of {sorted(_PHI)}")
    kwin, delta = int(cfg["Kwin"]), float(cfg["delta"])
    seeds = replicate_seeds(int(cfg["seed"]), max(1, parse_count(cfg["seeds"], "seeds")))
    samples = parse_count(cfg["samples"], "samples")
    rule = _n_rule(cfg)
    report = Report()
    means = []
    for L in Ls:
        geom = build_box(d, L, "periodic")
        if int(math.floor(delta * L)) < kwin:
            raise UsageError("delta", f"floor(delta*L)={int(math.floor(delta * L))} < Kwin={kwin} at L={L}")
        N = rule(geom.n_sites)
        vals = []
        for s in seeds:
            measure = CanonicalMeasure(_field(geom.n_sites, K, s if K > 0 else None), N, geom)
            est = two_block_statistic(measure, geom, _F[cfg["F"]], _PHI[cfg["phi"]], kwin, delta, samples, seed=s)
            vals.append(est.value)
            report.add("two_block", est.value, d, L, N, K, s, "exact-sampling", est.stderr)
        mean = float(np.mean(vals))
        means.append(mean)
        report.add("two_block_mean", mean, d, L, N, K, None, "seed-average",
                   float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else None)
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    report.passed = decreasing
    report.summary.append(f"two-block means over L={Ls}: {[round(m, 6) for m in means]}; strictly decreasing: "
                          f"{'pass' if decreasing else 'FAIL'}")
    return report


def run_kmc(cfg: dict) -> Report:
    mode = cfg.get("mode")
    if mode is None:
        raise UsageError("mode", "choose --check-equilibrium, --relax or --two-block")
    if mode == "two-block":
        return run_two_block(cfg)
    d = parse_int_list(cfg["d"], "d", 1)[0]
    Ls = parse_int_list(cfg["L"], "L", 2)
    K = parse_float_list(cfg["K"], "K", 0.0)[0]
    seed = int(cfg["seed"])
    rule = _n_rule(cfg)
    report = Report()
    if mode == "equilibrium":
        events = parse_count(cfg["events"], "events")
        for L in Ls:
            geom = build_box(d, L)
            N = rule(geom.n_sites)
            fseed = seed if K > 0 else None
            measure = CanonicalMeasure(_field(geom.n_sites, K, fseed), N, geom)
            try:
                state = KawasakiKMC.from_measure(measure, geom, seed=seed)
            except FrozenStateError as exc:
                raise UsageError("N", str(exc)) from None
            rep = equilibrium_check(state, measure, events, alpha_level=float(cfg["alpha_level"]))
            report.add("equilibrium_F", rep.statistic, d, L, N, K, fseed, rep.method)
            report.add("equilibrium_p", rep.p_value, d, L, N, K, fseed, rep.status)
            report.add("pearson_time_weighted", rep.pearson, d, L, N, K, fseed, "reference")
            report.passed &= rep.passed
            report.summary.append(f"L={L} N={N}: p={rep.p_value:.4g} ({rep.status})")
    elif mode == "relax":
        taus = []
        factor = float(cfg["relax_factor"])
        for L in Ls:
            geom = build_box(d, L)
            N = rule(geom.n_sites)
            fseed = seed if K > 0 else None
            fld = _field(geom.n_sites, K, fseed)
            measure = CanonicalMeasure(fld, N, geom)
            exact = None
            if ConfigSpace(geom.n_sites, N).size <= ENUMERABLE_LIMIT:
                g = kawasaki_gap(geom, N, fld)
                exact = 1.0 / g.gap
            # free-boundary first-mode guess when the space is too large to diagonalize
            guess = exact or 1.0 / (4 * (1 - math.cos(math.pi / L)))
            try:
                state = KawasakiKMC.from_measure(measure, geom, seed=seed)
            except FrozenStateError as exc:
                raise UsageError("N", str(exc)) from None
            res = relaxation_time(state, fourier_mode(geom), float(cfg["horizon_factor"]) * guess,
                                  float(cfg["dt_factor"]) * guess)
            taus.append(res.tau)
            report.add("tau", res.tau, d, L, N, K, fseed, "integrated", res.stderr)
            if not res.conclusive:
                report.passed = False
                report.summary.append(f"L={L}: horizon shorter than 50 tau (inconclusive)")
            if exact is not None:
                report.add("1/gap", exact, d, L, N, K, fseed, "eigensolve")
                ratio = res.tau / exact
                report.add("tau*gap", ratio, d, L, N, K, fseed)
                ok = 1 / factor <= ratio <= factor
                report.passed &= ok
                report.summary.append(f"L={L}: tau={res.tau:.4f}, 1/gap={exact:.4f}, ratio {ratio:.3f}: "
                                      f"{'pass' if ok else 'FAIL'}")
        if len(set(Ls)) >= 2:
            slope = float(np.polyfit(np.log(Ls), np.log(taus), 1)[0])
            ok = abs(slope - float(cfg["slope_target"])) <= float(cfg["slope_tol"])
            report.passed &= ok
            report.add("tau_loglog_slope", slope, d=d, K=K, method="least-squares")
            report.summary.append(f"log-log slope of tau(L): {slope:.4f}: {'pass' if ok else 'FAIL'}")
    else:
        raise UsageError("mode", f"unknown mode {mode!r}")
    return report


def run_congestion(cfg: dict) -> Report:
    d = parse_int_list(cfg["d"], "d", 1)[0]
    report = Report()
    for L in parse_int_list(cfg["L"], "L", 1):
        res = congestion(build_box(d, L))
        report.add("max_congestion", res.max_count, d, L, method=res.pair_convention)
        report.add("nominal_d(L/2)^(d+1)", res.nominal, d, L, method="nominal")
        if d == 1:
            formula = max(((i + 1) * (L - i - 1) for i in range(L - 1)), default=0)
            report.add("formula_max_i(i+1)(L-i-1)", formula, d, L)
            ok = res.max_count == formula and (L % 2 or res.max_count == res.nominal)
            report.passed &= bool(ok)
    report.summary.append(f"congestion: {'pass' if report.passed else 'FAIL'} (unordered pairs; ordered = 2x)")
    return report


COMMANDS = {"gap-scan": run_gap_scan, "verify": run_verify, "kmc": run_kmc, "two-block": run_two_block,
            "congestion": run_congestion}


# --- output ---------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render(report: Report, cfg: dict, fmt: str, timestamp: str) -> str:
    echo = json.dumps({k: cfg[k] for k in sorted(cfg)}, sort_keys=True, default=str)
    if fmt == "json":
        payload = {"generated": timestamp, "version": __version__, "config": json.loads(echo),
                   "passed": report.passed, "rows": report.rows, "summary": report.summary}
        return json.dumps(payload, indent=2, default=lambda o: float(o) if isinstance(o, np.floating) else str(o))
    buf = io.StringIO()
    buf.write(f"# generated: {timestamp}\n")
    buf.write(f"# version: bernoulli_gap {__version__}\n")
    buf.write(f"# config: {echo}\n")
    buf.write(f"# pair convention: {PAIR_CONVENTION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in report.rows:
        writer.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


# --- argument parsing -------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--output", "-o", help="output file (default: $BERNOULLI_GAP_OUTPUT_DIR or stdout)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bernoulli-gap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gap-scan", help="Kawasaki gap times L^2 over box sizes")
    _common(p)
    p.add_argument("--d")
    p.add_argument("--L", help="sizes: 4..14, 8,16,32 or 6")
    p.add_argument("--N", help="particle number (default floor(L^d/2))")
    p.add_argument("--K")
    p.add_argument("--seeds", help="number of random fields when K > 0")
    p.add_argument("--method", choices=["auto", "dense", "iterative"])
    p.add_argument("--band-ratio", dest="band_ratio", type=float)

    p = sub.add_parser("verify", help="comparison-inequality certificates")
    _common(p)
    p.add_argument("--lemma", type=int, choices=[1, 2])
    p.add_argument("--thm", type=int, choices=[1, 3])
    p.add_argument("--k", help="segment lengths for lemma 2")
    p.add_argument("--L", help="segment lengths for lemma 1 / sizes for theorem 3")
    p.add_argument("--sizes", help="system sizes for theorem 1")
    p.add_argument("--K", help="field bound(s), comma separated")
    p.add_argument("--N")
    p.add_argument("--seeds")
    p.add_argument("--trend-factor", dest="trend_factor", type=float)
    p.add_argument("--d", help="dimension for theorem 3")
    p.add_argument("--method", choices=["auto", "dense", "iterative"])
    p.add_argument("--band-ratio", dest="band_ratio", type=float)

    for name in ("kmc", "two-block"):
        p = sub.add_parser(name, help="kinetic Monte Carlo" if name == "kmc" else "two-block statistic")
        _common(p)
        if name == "kmc":
            mode = p.add_mutually_exclusive_group()
            mode.add_argument("--check-equilibrium", dest="mode", action="store_const", const="equilibrium")
            mode.add_argument("--relax", dest="mode", action="store_const", const="relax")
            mode.add_argument("--two-block", dest="mode", action="store_const", const="two-block")
            p.add_argument("--events")
            p.add_argument("--horizon-factor", dest="horizon_factor", type=float)
            p.add_argument("--dt-factor", dest="dt_factor", type=float)
        p.add_argument("--d")
        p.add_argument("--L")
        p.add_argument("--N")
        p.add_argument("--K")
        p.add_argument("--Kwin", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--samples")
        p.add_argument("--seeds")
        p.add_argument("--F", choices=sorted(_F))
        p.add_argument("--phi", choices=sorted(_PHI))

    p = sub.add_parser("congestion", help="canonical-path bond loads")
    _common(p)
    p.add_argument("--d")
    p.add_argument("--L")
    return parser


_NOT_CONFIG = {"command", "config", "verbose"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    try:
        cfg = resolve(args.command, load_config_file(args.config), overrides)
        report = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"bernoulli-gap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(f"bernoulli-gap {args.command}: nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    fmt = cfg["format"]
    timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = render(report, cfg, fmt, timestamp)
    out = cfg.get("output") or default_output_path(args.command, fmt)
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for line in report.summary:
        print(line, file=sys.stderr)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
