"""Command-line front end.

Every subcommand loads a model (--config JSON or --preset NAME), runs the
requested computation and writes CSV/JSON artifacts plus a manifest.json
listing each output file with its sha256. Re-running an identical command
reproduces identical hashes; nothing time- or host-dependent is written.

Exit codes: 0 solved/succeeded, 2 clean "not solvable" verdict, 1 error.

CSV layout: first column t in forward (ascending) time; matrix entries
row-major with headers m_i_j; 17 significant digits.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys

import click
import numpy as np

from .errors import MFLQError
from .finite_riccati import convergence_table, solve_finite
from .full_oracle import (eig_factorization_check, extract_blocks,
                          optimal_value, solve_full)
from .gains import centralized_gains, decentralized_gains
from .limit_riccati import solve_limit
from .mfg_compare import compare as mfg_cost_compare
from .mfg_compare import mfg_quadratic_weight, solve_mfg, weight_difference
from .model import (InitialLaw, PRESET_NAMES, load_model, scalar_model)
from .odecore import MatrixTrajectory, sup_distance
from .portfolio import PortfolioParams, closed_forms, verify_against_solver
from .simulate import SimConfig, gap_sweep, simulate as run_simulation


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _entry_headers(shape: tuple[int, ...]) -> list[str]:
    if len(shape) == 0:
        return ["m_0_0"]
    if len(shape) == 1:
        return [f"m_{i}_0" for i in range(shape[0])]
    return [f"m_{i}_{j}" for i in range(shape[0]) for j in range(shape[1])]


class _Artifacts:
    """Collects written files and finishes with a manifest."""

    def __init__(self, out_dir: str, command: str, source: dict, options: dict):
        self.out_dir = out_dir
        self.command = command
        self.source = source
        self.options = options
        self.hashes: dict[str, str] = {}
        os.makedirs(out_dir, exist_ok=True)

    def _register(self, name: str, data: bytes) -> None:
        with open(os.path.join(self.out_dir, name), "wb") as fh:
            fh.write(data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()

    def write_csv(self, name: str, header: list[str], rows) -> None:
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(x) for x in row))
        self._register(name, ("\n".join(lines) + "\n").encode())

    def write_traj_csv(self, name: str, traj) -> None:
        vals = np.asarray(traj.values)
        flat = vals.reshape(len(traj.grid), -1)
        header = ["t"] + _entry_headers(vals.shape[1:])
        rows = (np.concatenate([[t], row])
                for t, row in zip(traj.grid, flat))
        self.write_csv(name, header, rows)

    def write_json(self, name: str, payload: dict) -> None:
        data = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        self._register(name, data.encode())

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "source": self.source,
            "options": self.options,
            "out": self.out_dir,
            "artifacts": dict(sorted(self.hashes.items())),
        }
        data = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        self._register("manifest.json", data.encode())


def _jsonable(x):
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _model_options(f):
    opts = [
        click.option("--config", "config_path",
                     type=click.Path(exists=True, dir_okay=False),
                     default=None, help="JSON model file."),
        click.option("--preset", type=click.Choice(list(PRESET_NAMES)),
                     default=None, help="Built-in scalar model."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False),
                     default=None, help="Output directory "
                     "[default: out/<command>]."),
        click.option("--rtol", type=float, default=1e-8, show_default=True),
        click.option("--atol", type=float, default=1e-10, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True,
                     help="Monte Carlo seed; inert for exact commands."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _resolve_model(config_path, preset):
    if (config_path is None) == (preset is None):
        raise click.UsageError("provide exactly one of --config or --preset")
    if preset is not None:
        return scalar_model(preset), {"preset": preset}
    model, _ = load_model(config_path)
    return model, {"config": str(config_path)}


def _resolve_out(out_dir, command):
    return out_dir if out_dir is not None else os.path.join("out", command)


def _parse_law(mu0_text: str, sigma0_text: str, n: int) -> InitialLaw:
    mv = [float(x) for x in mu0_text.split(",")]
    mu0 = np.full(n, mv[0]) if len(mv) == 1 else np.asarray(mv, dtype=float)
    sv = [float(x) for x in sigma0_text.split(",")]
    sigma0 = sv[0] * np.eye(n) if len(sv) == 1 else np.diag(sv)
    return InitialLaw(mu0=mu0, sigma0=sigma0)


def _parse_n_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    seen: set[int] = set()
    uniq = [N for N in out if not (N in seen or seen.add(N))]
    if not uniq or min(uniq) < 1:
        raise click.UsageError(f"bad population list {text!r}")
    return uniq


def _write_verdict(art: _Artifacts, outcome) -> None:
    verdict: dict = {"solvable": bool(outcome.ok)}
    if not outcome.ok:
        verdict["failure_time"] = float(outcome.failure_time)
        verdict["failed_constraint"] = outcome.failed_constraint
        verdict["reason"] = outcome.failure_reason()
    art.write_json("verdict.json", verdict)


_LAW_HELP = ("Comma-separated values; a single value broadcasts "
             "(mean) or scales the identity (covariance).")


@click.group()
def cli() -> None:
    """Riccati solvers, oracles and Monte Carlo for mean field teams."""


@cli.command("solve-limit")
@_model_options
def cmd_solve_limit(config_path, preset, out_dir, rtol, atol, seed) -> int:
    """Solve the limiting Riccati system; emit trajectories + verdict."""
    model, source = _resolve_model(config_path, preset)
    art = _Artifacts(_resolve_out(out_dir, "solve-limit"), "solve-limit",
                     source, {"rtol": rtol, "atol": atol, "seed": seed})
    outcome = solve_limit(model, rtol=rtol, atol=atol)
    _write_verdict(art, outcome)
    # On failure the dict still holds the partial pieces over [t_fail, T].
    for name in ("Lambda1", "Lambda2", "Lambda3", "S", "r"):
        if name in outcome.trajectories:
            art.write_traj_csv(f"{name}.csv", outcome.trajectories[name])
    art.finish()
    if not outcome.ok:
        click.echo(f"not solvable: {outcome.failure_reason()}")
        return 2
    click.echo(f"solved on [0, {model.T:g}]")
    return 0


@cli.command("solve-finite")
@_model_options
@click.option("--N", "N", type=int, required=True,
              help="Population size.")
def cmd_solve_finite(config_path, preset, out_dir, rtol, atol, seed, N) -> int:
    """Solve the rescaled population-N system; emit trajectories + verdict."""
    model, source = _resolve_model(config_path, preset)
    art = _Artifacts(_resolve_out(out_dir, "solve-finite"), "solve-finite",
                     source,
                     {"N": N, "rtol": rtol, "atol": atol, "seed": seed})
    outcome = solve_finite(model, N, rtol=rtol, atol=atol)
    _write_verdict(art, outcome)
    for name in ("Lambda1N", "Lambda2N", "SN", "rN"):
        if name in outcome.trajectories:
            art.write_traj_csv(f"{name}.csv", outcome.trajectories[name])
    art.finish()
    if not outcome.ok:
        click.echo(f"not solvable at N={N}: {outcome.failure_reason()}")
        return 2
    click.echo(f"solved at N={N}")
    return 0


@cli.command("oracle")
@_model_options
@click.option("--N", "N", type=int, default=3, show_default=True,
              help="Population size for the unreduced solve.")
def cmd_oracle(config_path, preset, out_dir, rtol, atol, seed, N) -> int:
    """Cross-check block structure of the unreduced N-agent solution."""
    model, source = _resolve_model(config_path, preset)
    art = _Artifacts(_resolve_out(out_dir, "oracle"), "oracle", source,
                     {"N": N, "rtol": rtol, "atol": atol, "seed": seed})
    full_out = solve_full(model, N, rtol=min(rtol, 1e-10),
                          atol=min(atol, 1e-12))
    if not full_out.ok:
        _write_verdict(art, full_out)
        art.finish()
        click.echo(f"not solvable at N={N}: {full_out.failure_reason()}")
        return 2
    full = full_out.solution
    fin_out = solve_finite(model, N, rtol=min(rtol, 1e-10),
                           atol=min(atol, 1e-12))
    if not fin_out.ok:
        _write_verdict(art, fin_out)
        art.finish()
        click.echo(f"rescaled solve failed at N={N}")
        return 2
    fin = fin_out.solution

    report: dict = {"N": N, "tolerance": 1e-6}
    try:
        _, _, _, (lam1, lam2, sN, rN) = extract_blocks(full, N)
        report["structure_ok"] = True
    except MFLQError as exc:
        report["structure_ok"] = False
        report["structure_error"] = str(exc)
        art.write_json("oracle.json", _jsonable(report))
        art.finish()
        click.echo("structure check failed")
        return 1
    report["sup_Lambda1N"] = sup_distance(lam1, fin.Lambda1N)
    if N > 1:  # a single agent has no off-diagonal block to compare
        report["sup_Lambda2N"] = sup_distance(lam2, fin.Lambda2N)
    report["sup_SN"] = sup_distance(sN, fin.SN)
    report["sup_rN"] = sup_distance(rN, fin.rN)
    ts = np.linspace(0.0, model.T, 5)
    report["eig_factorization_t"] = list(ts)
    report["eig_factorization_ok"] = [
        eig_factorization_check(model, full, N, t) for t in ts]
    sup_keys = [k for k in report if k.startswith("sup_")]
    report["all_pass"] = bool(
        all(report[k] <= 1e-6 for k in sup_keys)
        and all(report["eig_factorization_ok"]))
    art.write_json("oracle.json", _jsonable(report))
    art.finish()
    click.echo("all-pass" if report["all_pass"] else "MISMATCH")
    return 0 if report["all_pass"] else 1


@cli.command("gap-sweep")
@_model_options
@click.option("--N-list", "n_list", default="1..200", show_default=True,
              help="Population sizes: comma items and lo..hi ranges.")
@click.option("--mu0", default="1", show_default=True, help=_LAW_HELP)
@click.option("--sigma0", default="0", show_default=True, help=_LAW_HELP)
def cmd_gap_sweep(config_path, preset, out_dir, rtol, atol, seed,
                  n_list, mu0, sigma0) -> int:
    """Exact optimality gap of the decentralized control over N."""
    model, source = _resolve_model(config_path, preset)
    Ns = _parse_n_list(n_list)
    law = _parse_law(mu0, sigma0, model.n)
    art = _Artifacts(_resolve_out(out_dir, "gap-sweep"), "gap-sweep", source,
                     {"N_list": n_list, "mu0": mu0, "sigma0": sigma0,
                      "rtol": rtol, "atol": atol, "seed": seed})
    outcome = solve_limit(model, rtol=rtol, atol=atol)
    if not outcome.ok:
        _write_verdict(art, outcome)
        art.finish()
        click.echo(f"not solvable: {outcome.failure_reason()}")
        return 2
    table = gap_sweep(model, Ns, law, limit=outcome.solution,
                      rtol=rtol, atol=atol)
    art.write_csv(
        "gap.csv", ["N", "gap", "zeta0N", "linear", "constant"],
        zip(table["N"], table["gap"], table["zeta0N"],
            table["linear"], table["constant"]))
    diffs = np.asarray(table["sum_difference"])
    header = ["N"] + _entry_headers(diffs.shape[1:])
    art.write_csv(
        "sum-difference.csv", header,
        (np.concatenate([[N], d.reshape(-1)])
         for N, d in zip(table["N"], diffs)))
    art.finish()
    gmax = float(np.max(table["gap"]))
    click.echo(f"{len(Ns)} populations; max gap {gmax:.6g} "
               f"at N={int(table['N'][int(np.argmax(table['gap']))])}")
    return 0


@cli.command("simulate")
@_model_options
@click.option("--N", "N", type=int, default=20, show_default=True)
@click.option("--paths", type=int, default=2000, show_default=True)
@click.option("--dt", type=float, default=None,
              help="Euler step [default: T/200].")
@click.option("--control", type=click.Choice(["centralized",
                                              "decentralized"]),
              default="centralized", show_default=True)
@click.option("--mu0", default="1", show_default=True, help=_LAW_HELP)
@click.option("--sigma0", default="0", show_default=True, help=_LAW_HELP)
@click.option("--node-stats", is_flag=True,
              help="Also write per-time-node statistics CSV.")
def cmd_simulate(config_path, preset, out_dir, rtol, atol, seed, N, paths,
                 dt, control, mu0, sigma0, node_stats) -> int:
    """Closed-loop Monte Carlo of the N-agent social cost."""
    model, source = _resolve_model(config_path, preset)
    law = _parse_law(mu0, sigma0, model.n)
    art = _Artifacts(_resolve_out(out_dir, "simulate"), "simulate", source,
                     {"N": N, "paths": paths, "dt": dt, "control": control,
                      "mu0": mu0, "sigma0": sigma0,
                      "rtol": rtol, "atol": atol, "seed": seed})
    lim_out = solve_limit(model, rtol=rtol, atol=atol)
    if not lim_out.ok:
        _write_verdict(art, lim_out)
        art.finish()
        click.echo(f"not solvable: {lim_out.failure_reason()}")
        return 2
    fin_out = solve_finite(model, N, rtol=rtol, atol=atol)
    if not fin_out.ok:
        _write_verdict(art, fin_out)
        art.finish()
        click.echo(f"not solvable at N={N}: {fin_out.failure_reason()}")
        return 2
    if control == "centralized":
        gains = centralized_gains(model, N, fin_out.solution)
    else:
        gains = decentralized_gains(model, lim_out.solution)
    cfg = SimConfig(N=N, paths=paths, law=law, dt=dt, seed=seed)
    result = run_simulation(model, gains, cfg,
                            collect_node_stats=node_stats)
    closed = optimal_value(model, N, law, finite=fin_out.solution)
    summary = {
        "control": control, "N": N, "paths": result.paths,
        "seed": seed, "dt": model.T / cfg.steps(model.T),
        "J_soc_hat": result.J_soc_hat, "ci_half": result.ci_half,
        "per_agent": result.per_agent,
        "second_moment_max": result.second_moment_max,
        "J_soc_optimal": closed["J_soc"],
        "abs_dev_from_optimal": abs(result.J_soc_hat - closed["J_soc"]),
    }
    if result.mf_error is not None:
        summary["mf_error"] = result.mf_error
    art.write_json("summary.json", _jsonable(summary))
    if node_stats:
        ns = result.node_stats
        art.write_csv(
            "node_stats.csv",
            ["t", "mean_sq_x1", "mean_sq_mfgap", "running_cost"],
            zip(ns["t"], ns["mean_sq_x1"], ns["mean_sq_mfgap"],
                ns["running_cost"]))
    art.finish()
    click.echo(f"J_soc_hat = {result.J_soc_hat:.6g} "
               f"+/- {result.ci_half:.3g} "
               f"(optimal {closed['J_soc']:.6g})")
    return 0


@cli.command("mfg-compare")
@_model_options
@click.option("--mu0", default="1", show_default=True, help=_LAW_HELP)
@click.option("--sigma0", default="0", show_default=True, help=_LAW_HELP)
def cmd_mfg_compare(config_path, preset, out_dir, rtol, atol, seed,
                    mu0, sigma0) -> int:
    """Efficiency gain of social optimum over the game equilibrium."""
    model, source = _resolve_model(config_path, preset)
    law = _parse_law(mu0, sigma0, model.n)
    art = _Artifacts(_resolve_out(out_dir, "mfg-compare"), "mfg-compare",
                     source, {"mu0": mu0, "sigma0": sigma0,
                              "rtol": rtol, "atol": atol, "seed": seed})
    lim_out = solve_limit(model, rtol=rtol, atol=atol)
    if not lim_out.ok:
        _write_verdict(art, lim_out)
        art.finish()
        click.echo(f"not solvable: {lim_out.failure_reason()}")
        return 2
    mfg_out = solve_mfg(model, rtol=rtol, atol=atol)
    if not mfg_out.ok:
        _write_verdict(art, mfg_out)
        art.finish()
        click.echo(f"game system not solvable: {mfg_out.failure_reason()}")
        return 2
    limit, mfg = lim_out.solution, mfg_out.solution
    costs = mfg_cost_compare(model, law, limit=limit, mfg=mfg,
                             rtol=rtol, atol=atol)
    diff = weight_difference(limit, mfg)
    art.write_traj_csv("difference.csv", diff)
    art.write_traj_csv("social_weight.csv", limit.Lambda3)
    game_w = MatrixTrajectory(
        grid=mfg.Lambda1g.grid,
        values=np.array([mfg_quadratic_weight(mfg, float(t))
                         for t in mfg.Lambda1g.grid]))
    art.write_traj_csv("game_weight.csv", game_w)
    payload = dict(costs)
    payload["lambda1_agreement"] = sup_distance(mfg.Lambda1g, limit.Lambda1)
    payload["difference_at_0"] = diff.eval(0.0)
    art.write_json("compare.json", _jsonable(payload))
    art.finish()
    click.echo(f"efficiency gain {costs['gain']:.6g}")
    return 0


@cli.command("portfolio")
@click.option("--rho", type=float, default=0.05, show_default=True,
              help="Risk-free rate.")
@click.option("--alpha", type=float, default=0.15, show_default=True,
              help="Stock appreciation rate.")
@click.option("--sigma", type=float, default=0.25, show_default=True,
              help="Stock volatility.")
@click.option("--gamma", type=float, default=1.0, show_default=True,
              help="Variance aversion.")
@click.option("--horizon", "T", type=float, default=1.0, show_default=True)
@click.option("--x0", type=float, default=1.0, show_default=True,
              help="Initial wealth.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None)
@click.option("--rtol", type=float, default=1e-10, show_default=True)
@click.option("--atol", type=float, default=1e-12, show_default=True)
def cmd_portfolio(rho, alpha, sigma, gamma, T, x0, out_dir,
                  rtol, atol) -> int:
    """Mean-variance portfolio specialization: closed forms vs solver."""
    p = PortfolioParams(rho=rho, alpha=alpha, sigma=sigma, gamma=gamma,
                        T=T, x0=x0)
    art = _Artifacts(_resolve_out(out_dir, "portfolio"), "portfolio",
                     {"params": {"rho": rho, "alpha": alpha, "sigma": sigma,
                                 "gamma": gamma, "T": T, "x0": x0}},
                     {"rtol": rtol, "atol": atol})
    report = verify_against_solver(p, rtol=rtol, atol=atol)
    art.write_json("portfolio.json", _jsonable(report))
    forms = closed_forms(p)
    theta = p.risk_coef
    ts = np.linspace(0.0, p.T, 201)
    rows = []
    for t in ts:
        lam1 = forms["Lambda1_of_t"](t)
        s = forms["S_of_t"](t)
        ratio = forms["C_of_t"](t) / forms["A_of_t"](t)
        rows.append((t, lam1, s, theta, theta * s / lam1, ratio))
    art.write_csv("portfolio.csv",
                  ["t", "Lambda1", "S", "Theta", "Theta2", "CA_ratio"],
                  rows)
    art.finish()
    if not report.get("solved", False):
        click.echo(f"not solvable: {report.get('reason', '?')}")
        return 2
    ok = all(bool(v) for k, v in report.items() if k.startswith("pass_"))
    click.echo("all-pass" if ok else "MISMATCH")
    return 0 if ok else 1


@cli.command("convergence")
@_model_options
@click.option("--N-list", "n_list", default="25,50,100", show_default=True,
              help="Population sizes: comma items and lo..hi ranges.")
def cmd_convergence(config_path, preset, out_dir, rtol, atol, seed,
                    n_list) -> int:
    """Sup-norm distance of the population-N system from its limit."""
    model, source = _resolve_model(config_path, preset)
    Ns = _parse_n_list(n_list)
    art = _Artifacts(_resolve_out(out_dir, "convergence"), "convergence",
                     source, {"N_list": n_list, "rtol": rtol, "atol": atol,
                              "seed": seed})
    try:
        table = convergence_table(model, Ns, rtol=rtol, atol=atol)
    except RuntimeError as exc:
        art.write_json("verdict.json", {"solvable": False,
                                        "reason": str(exc)})
        art.finish()
        click.echo(f"not solvable: {exc}")
        return 2
    art.write_csv("convergence.csv", ["N", "e1", "e2", "eS", "er"],
                  zip(table["N"], table["e1"], table["e2"],
                      table["eS"], table["er"]))
    art.write_json("verdict.json", {"solvable": True})
    art.finish()
    click.echo(f"{len(Ns)} populations")
    return 0


def main(argv=None) -> None:
    try:
        rv = cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except MFLQError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # pragma: no cover - last-resort guard
        click.echo(f"internal error: {exc!r}", err=True)
        sys.exit(1)
    sys.exit(int(rv) if isinstance(rv, int) else 0)


if __name__ == "__main__":
    main()
