"""Command-line runner: ``pimtool <subcommand> [flags]``.

Every output file starts with a ``#`` comment block recording the tool
version, a hash of the run's flags and the seed, followed by one timestamp
line. Bodies depend only on the flags, so reruns are byte-identical below
the timestamp. Setting ``SOURCE_DATE_EPOCH`` pins the timestamp too.

Exit status: 0 on success, 1 on a computation error (its class name is
printed on stderr), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import os
import shlex
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from pimtool import __version__
from pimtool.errors import PimError
from pimtool.fim import fim_or_none, mc_fim
from pimtool.gmm import DATA_STREAM, estimate, mc_estimator_study
from pimtool.linalg import format_matrix, loewner_leq, min_eigenvalue
from pimtool.maxent import bound_chain_check, maxent_for_model, structural_obstruction, support_for
from pimtool.models import Capability, ModelSpec, analytic_fim, sample
from pimtool.moments import compute_moments
from pimtool.pim import ladder, pim
from pimtool.statistics import eval_stats, monomial_ladder, parse_stats

SEED_ENV = "PIMTOOL_SEED"

# flags that change how a run executes but not what it computes
_NON_SEMANTIC = {"out", "jobs", "manifest", "func"}

DEFAULT_ZOO = """\
# model / statistics pairs checked by `pimtool verify` when no manifest is given
--model gaussian --theta 0,1 --stats m1,m2 --max-degree 4
--model gaussian --theta 1.5,0.5 --stats m1,m2
--model exponential --theta 2 --stats m1 --max-degree 3
--model bernoulli --theta 0.3 --stats m1
--model laplace --theta 0 --stats m1
--model laplace --theta 0 --stats m1,m2 --max-degree 4
--model transformed-gaussian --theta 0,1 --stats m1,m2,m3,m4 --method mc
"""


class UsageError(Exception):
    pass


def _theta(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _stats(text: str):
    try:
        return parse_stats(text)
    except (ValueError, PimError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", required=True, help="family: gaussian, exponential, laplace, bernoulli, transformed-gaussian")
    g.add_argument("--theta", type=_theta, required=True, help="parameter point, e.g. 0,1")
    g.add_argument("--n-obs", type=_positive_int, default=1, help="observations per dataset (default 1)")
    g.add_argument("--cubic", type=float, default=0.1, help="cubic coefficient of transformed-gaussian")
    g.add_argument("--scale", type=float, default=1.0, help="known Laplace scale")
    g.add_argument("--known-var", type=float, default=None, help="fix the Gaussian variance; theta is then the mean")


def _method_flags(p: argparse.ArgumentParser, stats_default: str | None = "m1,m2") -> None:
    g = p.add_argument_group("moments")
    g.add_argument("--stats", type=_stats, default=None if stats_default is None else parse_stats(stats_default),
                   help="statistics, e.g. m1,m2")
    g.add_argument("--method", choices=["analytic", "mc", "auto"], default="auto",
                   help="moment source; auto prefers closed forms")
    g.add_argument("--samples", type=_positive_int, default=10**5, help="Monte Carlo draws k")
    g.add_argument("--seed", type=int, default=None, help=f"stream seed (else ${SEED_ENV}, else 0)")
    g.add_argument("--fd-step", type=float, default=1e-4, help="relative finite-difference step")
    g.add_argument("--ridge", type=float, default=0.0, help="retry a singular Sigma with this relative ridge")
    g.add_argument("--jobs", type=_positive_int, default=1, help="worker threads; output does not depend on it")
    g.add_argument("--out", type=Path, default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimtool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pimtool {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pim", help="Pearson information matrix")
    _model_flags(p)
    _method_flags(p)
    p.set_defaults(func=cmd_pim)

    p = sub.add_parser("fim", help="Fisher information matrix (analytic or Monte Carlo)")
    _model_flags(p)
    _method_flags(p)
    p.set_defaults(func=cmd_fim)

    p = sub.add_parser("ladder", help="PIM over the nested monomial ladder m1, m1..m2, ...")
    _model_flags(p)
    _method_flags(p)
    p.add_argument("--max-degree", type=_positive_int, default=4, help="top monomial degree")
    p.set_defaults(func=cmd_ladder)

    p = sub.add_parser("maxent", help="maxent fit and the misspecified-information chain")
    _model_flags(p)
    _method_flags(p)
    p.set_defaults(func=cmd_maxent)

    p = sub.add_parser("verify", help="run the bound chains over a manifest of models")
    p.add_argument("--manifest", type=Path, default=None, help="one run of flags per line (default: built-in zoo)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker threads")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gmm", help="two-step GMM estimate from one dataset")
    _model_flags(p)
    _method_flags(p)
    p.add_argument("--data", type=Path, default=None, help="whitespace-separated observations (default: simulate at theta)")
    p.add_argument("--init", type=_theta, default=None, help="starting theta")
    p.set_defaults(func=cmd_gmm)

    p = sub.add_parser("study", help="Monte Carlo study of GMM estimates against the inverse PIM")
    _model_flags(p)
    _method_flags(p)
    p.add_argument("--reps", type=_positive_int, default=1000, help="simulated datasets (>= 100)")
    p.add_argument("--pim-samples", type=_positive_int, default=10**6, help="draws for the predicted PIM")
    p.add_argument("--init", type=_theta, default=None, help="starting theta")
    p.set_defaults(func=cmd_study)
    return parser


# ---------------------------------------------------------------- output


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def manifest_hash(args: argparse.Namespace) -> str:
    items = sorted((k, _canon(v)) for k, v in vars(args).items() if k not in _NON_SEMANTIC)
    text = f"{args.command};" + ";".join(f"{k}={v}" for k, v in items)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _canon(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(repr(x) for x in v)
    if isinstance(v, Path):
        return v.name
    return str(v)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def header(args: argparse.Namespace) -> str:
    return (
        f"# pimtool {__version__} {args.command}\n"
        f"# manifest {manifest_hash(args)}\n"
        f"# seed {args.seed}\n"
        f"# created {_timestamp()}\n"
    )


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def emit(args: argparse.Namespace, body: str) -> None:
    text = header(args) + body
    if args.out is None:
        sys.stdout.write(text)
    else:
        write_atomic(args.out, text)


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list, np.ndarray)):
        return " ".join(_cell(v) for v in np.ravel(x))
    return str(x)


def _matrix_report(args, info) -> str:
    m = info.matrix
    row = [
        ["theta", "M", "min_eig", "frobenius", "method"],
        [args.theta, len(args.stats), min_eigenvalue(m), float(np.linalg.norm(m)), info.method],
    ]
    return format_matrix(m) + "#csv\n" + _csv(row)


def _model(args: argparse.Namespace) -> ModelSpec:
    return ModelSpec(
        args.model,
        args.theta,
        n_obs=args.n_obs,
        cubic=args.cubic,
        scale=args.scale,
        known_var=args.known_var,
    )


# --------------------------------------------------------------- commands


def cmd_pim(args) -> int:
    model = _model(args)
    summary = compute_moments(
        model, args.stats, args.method, k=args.samples, seed=args.seed, fd_step=args.fd_step, jobs=args.jobs
    )
    emit(args, _matrix_report(args, pim(summary, args.ridge)))
    return 0


def cmd_fim(args) -> int:
    model = _model(args)
    if args.method == "analytic" or (args.method == "auto" and model.has(Capability.ANALYTIC_FIM)):
        info = analytic_fim(model)
    else:
        info = mc_fim(model, args.samples, args.seed, jobs=args.jobs)
    emit(args, _matrix_report(args, info))
    return 0


def cmd_ladder(args) -> int:
    model = _model(args)
    fim = fim_or_none(model, args.samples, args.seed, jobs=args.jobs)
    rep = ladder(
        model,
        monomial_ladder(args.max_degree),
        args.method,
        k=args.samples,
        seed=args.seed,
        fd_step=args.fd_step,
        fim=fim,
        jobs=args.jobs,
    )
    rows = [["M", "min_eig", "frobenius", "diff_min_eig", "extend_residual", "below_fim", "error"]]
    below = iter(rep.below_fim)
    for r in rep.rungs:
        if r.info is None:
            rows.append([r.m, None, None, None, None, None, r.error])
            continue
        rows.append([
            r.m,
            r.info.min_eigenvalue,
            float(np.linalg.norm(r.info.matrix)),
            r.diff_min_eigenvalue,
            r.extend_residual,
            next(below, None),
            None,
        ])
    emit(args, _csv(rows))
    return 0


def cmd_maxent(args) -> int:
    model = _model(args)
    fit = maxent_for_model(model, args.stats, method=args.method, k=args.samples, seed=args.seed)
    rep = bound_chain_check(
        model, args.stats, args.samples, args.seed, method=args.method, fit=fit, jobs=args.jobs
    )
    rows = [["quantity", "value"]]
    rows += [[f"lambda[{i}]", v] for i, v in enumerate(fit.lam)]
    rows += [
        ["lambda0", fit.lambda0],
        ["residual", fit.residual],
        ["iterations", fit.iterations],
        ["converged", fit.converged],
        ["quadrature_nodes", fit.nodes],
    ]
    for name, mat in [
        ("f_star", rep.f_star.matrix),
        ("f_tilde", rep.f_tilde),
        ("f_tilde_stderr", rep.f_tilde_stderr),
        ("pim", rep.pim.matrix),
    ] + ([("fim", rep.fim.matrix)] if rep.fim is not None else []):
        for (i, j), v in np.ndenumerate(mat):
            rows.append([f"{name}[{i},{j}]", v])
    rows += [
        ["lower_margin", rep.lower_margin],
        ["upper_margin", rep.upper_margin],
        ["chain_holds", rep.chain_holds],
        ["gap_identity_residual", rep.gap_identity_residual],
        ["gap_budget", rep.gap_budget],
        ["tight_residual", rep.tight_residual],
    ]
    emit(args, _csv(rows))
    return 0


def cmd_gmm(args) -> int:
    model = _model(args)
    if args.data is not None:
        y = np.loadtxt(args.data, dtype=np.float64, ndmin=1).ravel()
        model = model.with_n_obs(len(y))
    else:
        y = sample(model, 1, args.seed, stream=DATA_STREAM).draws[0]
    res = estimate(
        model, eval_stats(args.stats, y), args.stats, args.init, method=args.method, k=args.samples, seed=args.seed
    )
    rows = [["param", "theta_hat", "asymptotic_sd"]]
    sd = np.sqrt(np.diag(res.asymptotic_cov))
    rows += [[i, t, s] for i, (t, s) in enumerate(zip(res.theta_hat, sd))]
    rows += [
        ["iterations", res.iterations, None],
        ["converged", res.converged, None],
        ["final_cost", res.final_cost, None],
        ["weight", res.weight_provenance, None],
    ]
    emit(args, _csv(rows))
    return 0


def cmd_study(args) -> int:
    model = _model(args)
    rep = mc_estimator_study(
        model,
        args.stats,
        args.n_obs,
        args.reps,
        args.seed,
        method=args.method,
        k_map=args.samples,
        k_pim=args.pim_samples,
        init=args.init,
        jobs=args.jobs,
    )
    n = model.n
    rows = [["rep", *(f"theta_{j}" for j in range(n)), "iterations", "converged", "empirical_cov", "predicted_cov"]]
    for i in range(rep.reps):
        rows.append([i, *rep.estimates[i], int(rep.iterations[i]), bool(rep.converged[i]), None, None])
    ok = ~np.isnan(rep.estimates).any(axis=1)
    rows.append([
        "summary",
        *rep.estimates[ok].mean(axis=0),
        float(rep.iterations[ok].mean()),
        int(rep.converged.sum()),
        rep.empirical_cov,
        rep.predicted_cov,
    ])
    emit(args, _csv(rows))
    return 0


# ----------------------------------------------------------------- verify


def _manifest_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manifest line", add_help=False, exit_on_error=False)
    _model_flags(p)
    _method_flags(p)
    p.add_argument("--max-degree", type=_positive_int, default=None)
    return p


def read_manifest(text: str, seed: int) -> list[argparse.Namespace]:
    parser = _manifest_parser()
    runs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            ns = parser.parse_args(shlex.split(line))
        except (argparse.ArgumentError, SystemExit) as exc:
            raise UsageError(f"manifest line {lineno}: {exc}") from None
        if ns.seed is None:
            ns.seed = seed
        runs.append(ns)
    if not runs:
        raise UsageError("manifest has no runs")
    return runs


def _row(run, check, status, margin=None, tol=None, detail=""):
    return [run.model, run.theta, str(run.stats), check, status, margin, tol, detail]


def verify_run(run: argparse.Namespace) -> list[list]:
    """One CSV row per check on one manifest line.

    Status is pass, fail, error, n/a or ridged. Ridged rows are reported
    but take no part in the overall verdict.
    """
    rows: list[list] = []
    try:
        model = _model(run)
        summary = compute_moments(model, run.stats, run.method, k=run.samples, seed=run.seed, fd_step=run.fd_step)
        b = pim(summary, run.ridge)
    except PimError as exc:
        return [_row(run, "pim", "error", detail=f"{type(exc).__name__}: {exc}")]
    ridged = run.ridge > 0

    def status(ok: bool) -> str:
        return "ridged" if ridged else ("pass" if ok else "fail")

    lam = b.min_eigenvalue
    tol = 1e-10 * max(1.0, float(np.linalg.norm(b.matrix)))
    rows.append(_row(run, "pim>=0", status(lam >= -tol), lam, tol))

    fim = fim_or_none(model, run.samples, run.seed)
    if fim is None:
        rows.append(_row(run, "fim-absent", status(True), detail=",".join(sorted(c.value for c in model.capabilities))))
    else:
        abs_tol = 0.0 if fim.stderr is None else 5.0 * float(np.linalg.norm(fim.stderr))
        up = loewner_leq(b.matrix, fim.matrix, 1e-8, abs_tol=abs_tol)
        rows.append(_row(run, "pim<=fim", status(up.holds), up.min_eigenvalue_of_difference, up.tolerance_used))

    obstruction = structural_obstruction(support_for(model), run.stats)
    if obstruction is not None:
        rows.append(_row(run, "fstar+ftilde<=pim", "n/a", detail=obstruction))
    elif model.has(Capability.SCORE):
        try:
            rep = bound_chain_check(model, run.stats, run.samples, run.seed, method=run.method)
            rows.append(_row(run, "fstar+ftilde<=pim", status(rep.lower_ok), rep.lower_margin))
            rows.append(
                _row(run, "gap-identity", status(rep.gap_identity_ok), rep.gap_identity_residual, rep.gap_budget)
            )
        except PimError as exc:
            rows.append(_row(run, "maxent-chain", "error", detail=f"{type(exc).__name__}: {exc}"))

    if run.max_degree is not None:
        try:
            lad = ladder(
                model, monomial_ladder(run.max_degree), run.method, k=run.samples, seed=run.seed, fim=fim
            )
            worst = min((r.diff_min_eigenvalue for r in lad.rungs if r.diff_min_eigenvalue is not None), default=None)
            # rung-vs-FIM comparisons are already covered by the Monte Carlo aware pim<=fim row
            rows.append(_row(run, "ladder-monotone", status(lad.monotone), worst, lad.tolerance))
        except PimError as exc:
            rows.append(_row(run, "ladder-monotone", "error", detail=f"{type(exc).__name__}: {exc}"))
    return rows


def cmd_verify(args) -> int:
    text = DEFAULT_ZOO if args.manifest is None else args.manifest.read_text()
    runs = read_manifest(text, args.seed)
    args.manifest_text = text  # hashed into the header in place of the path
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            per_run = list(pool.map(verify_run, runs))
    else:
        per_run = [verify_run(r) for r in runs]
    rows = [["model", "theta", "stats", "check", "status", "margin", "tolerance", "detail"]]
    for r in per_run:
        rows += r
    emit(args, _csv(rows))
    failed = [r for r in rows[1:] if r[4] in ("fail", "error")]
    for r in failed:
        print(f"check failed: {r[0]} [{r[2]}] {r[3]} {r[7]}".rstrip(), file=sys.stderr)
    return 1 if failed else 0


# ------------------------------------------------------------------- main


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.seed = resolve_seed(args.seed)
        return args.func(args)
    except UsageError as exc:
        print(f"pimtool: usage error: {exc}", file=sys.stderr)
        return 2
    except PimError as exc:
        print(f"pimtool: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pimtool: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
