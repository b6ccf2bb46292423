"""Render static figures from mflq run directories.

This is a pure presentation layer. It reads the CSV and JSON artifacts the
mflq command line tool writes (trajectory CSVs with a leading ``t`` column
and row-major ``m_i_j`` entries, sweep CSVs keyed by ``N``, verdict JSON)
and draws them; it never recomputes any of the mathematics. Inputs are
validated loudly: a missing file raises MissingInput, a file whose columns
do not match the documented layout raises SchemaMismatch.

Byte-identical inputs produce pixel-identical PNGs: the style is pinned, no
timestamps or software tags are embedded, and input discovery is sorted.
"""
from __future__ import annotations

import csv
import json
import os
import re
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

FIGURE_NAMES = ("fig1", "fig2", "fig3")
_ENTRY_RE = re.compile(r"^m_\d+_\d+$")
_DPI = 150
_SAVE_KW = {"dpi": _DPI, "metadata": {"Software": None}}


class MissingInput(Exception):
    """A required input file (or directory) is absent."""


class SchemaMismatch(Exception):
    """An input file exists but its columns are not the documented layout."""


@dataclass
class FigureSpec:
    """Everything a figure needs, resolved before any drawing happens."""

    name: str
    inputs: dict[str, str]
    panels: tuple[int, int]
    xlabels: tuple[str, ...]
    ylabels: tuple[str, ...]
    output_path: str
    runs: list[str] = field(default_factory=list)


def _require(path: str) -> str:
    if not os.path.isfile(path):
        raise MissingInput(f"required input not found: {path}")
    return path


def _read_rows(path: str) -> tuple[list[str], np.ndarray]:
    """Header and float body of a CSV; loud on ragged or non-numeric rows."""
    with open(_require(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        body = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaMismatch(
                    f"{path}: line {i} has {len(row)} fields,"
                    f" header has {len(header)}")
            try:
                body.append([float(v) for v in row])
            except ValueError as exc:
                raise SchemaMismatch(f"{path}: line {i}: {exc}") from None
    if not body:
        raise SchemaMismatch(f"{path}: no data rows")
    return header, np.asarray(body)


def _check_entries(path: str, names: list[str]) -> None:
    bad = [c for c in names if not _ENTRY_RE.match(c)]
    if bad:
        raise SchemaMismatch(f"{path}: unexpected entry columns {bad}")
    if not names:
        raise SchemaMismatch(f"{path}: no entry columns")


def read_trajectory(path: str) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(t, values, entry names) from a trajectory CSV.

    Layout contract: first column ``t`` ascending, remaining columns the
    row-major matrix entries named ``m_i_j``.
    """
    header, body = _read_rows(path)
    if header[0] != "t":
        raise SchemaMismatch(f"{path}: first column is {header[0]!r},"
                             " expected 't'")
    _check_entries(path, header[1:])
    return body[:, 0], body[:, 1:], header[1:]


def read_sweep(path: str, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Columns of an N-indexed sweep CSV, checking the required names."""
    header, body = _read_rows(path)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns {missing}")
    return {name: body[:, k] for k, name in enumerate(header)}


def read_verdict(path: str) -> dict | None:
    """verdict.json if present; figures still render without one."""
    if not os.path.isfile(path):
        return None
    with open(path) as fh:
        doc = json.load(fh)
    if "solvable" not in doc:
        raise SchemaMismatch(f"{path}: no 'solvable' field")
    return doc


def _limit_run_dirs(input_dir: str) -> list[str]:
    """Solve-limit run directories under input_dir, or input_dir itself.

    A directory qualifies when it holds a Lambda1.csv. Subdirectories are
    taken in sorted order so the panel layout is reproducible.
    """
    if not os.path.isdir(input_dir):
        raise MissingInput(f"input directory not found: {input_dir}")
    if os.path.isfile(os.path.join(input_dir, "Lambda1.csv")):
        return [input_dir]
    subs = sorted(
        os.path.join(input_dir, d) for d in os.listdir(input_dir)
        if os.path.isfile(os.path.join(input_dir, d, "Lambda1.csv")))
    if not subs:
        raise MissingInput(
            f"no Lambda1.csv under {input_dir} or its subdirectories")
    return subs


def _plot_entries(ax, t, values, names, **kw):
    for k, name in enumerate(names):
        label = name if len(names) > 1 else None
        ax.plot(t, values[:, k], label=label, **kw)
    if len(names) > 1:
        ax.legend(fontsize=7)


def spec_fig1(input_dir: str, output_path: str) -> FigureSpec:
    runs = _limit_run_dirs(input_dir)
    inputs = {}
    for run in runs:
        inputs[f"{run}/Lambda1"] = _require(os.path.join(run, "Lambda1.csv"))
        inputs[f"{run}/Lambda2"] = _require(os.path.join(run, "Lambda2.csv"))
    return FigureSpec(
        name="fig1", inputs=inputs, panels=(2, len(runs)),
        xlabels=("t",), ylabels=("Lambda1", "Lambda2"),
        output_path=output_path, runs=runs)


def render_fig1(spec: FigureSpec) -> None:
    """One column per run: Lambda1 on top, Lambda2 below.

    A run that failed inside the horizon contributes only the partial
    trajectory from its failure time onward; the panel keeps the full [0, T]
    x-range and marks the failure time, so the gap on the left and the
    divergence at the failure time are both visible.
    """
    ncols = spec.panels[1]
    fig, axes = plt.subplots(2, ncols, figsize=(3.4 * ncols, 5.2),
                             squeeze=False)
    t_max = 0.0
    for run in spec.runs:
        t, _, _ = read_trajectory(os.path.join(run, "Lambda1.csv"))
        t_max = max(t_max, float(t[-1]))
    for col, run in enumerate(spec.runs):
        verdict = read_verdict(os.path.join(run, "verdict.json"))
        for row, stem in enumerate(("Lambda1", "Lambda2")):
            ax = axes[row][col]
            t, vals, names = read_trajectory(
                os.path.join(run, f"{stem}.csv"))
            _plot_entries(ax, t, vals, names)
            ax.set_xlim(0.0, t_max)
            ax.set_ylabel(spec.ylabels[row])
            ax.grid(True, alpha=0.3)
            if verdict is not None and not verdict["solvable"]:
                t_fail = verdict.get("failure_time")
                if t_fail is not None:
                    ax.axvline(float(t_fail), color="crimson",
                               linestyle="--", linewidth=1.0)
            if row == 0:
                title = os.path.basename(os.path.normpath(run))
                if verdict is not None and not verdict["solvable"]:
                    title += " (not solvable)"
                ax.set_title(title, fontsize=9)
            if row == 1:
                ax.set_xlabel(spec.xlabels[0])
    fig.tight_layout()
    fig.savefig(spec.output_path, **_SAVE_KW)
    plt.close(fig)


def spec_fig2(input_dir: str, output_path: str) -> FigureSpec:
    if not os.path.isdir(input_dir):
        raise MissingInput(f"input directory not found: {input_dir}")
    return FigureSpec(
        name="fig2",
        inputs={
            "gap": _require(os.path.join(input_dir, "gap.csv")),
            "sum_difference": _require(
                os.path.join(input_dir, "sum-difference.csv")),
        },
        panels=(1, 2), xlabels=("N", "N"),
        ylabels=("t=0 matrix-sum difference", "optimality gap"),
        output_path=output_path)


def render_fig2(spec: FigureSpec) -> None:
    """Left: the t=0 matrix-sum difference over N. Right: the gap over N."""
    sums = read_sweep(spec.inputs["sum_difference"], ("N",))
    entry_names = sorted(c for c in sums if _ENTRY_RE.match(c))
    if not entry_names:
        raise SchemaMismatch(
            f"{spec.inputs['sum_difference']}: no m_i_j columns")
    gaps = read_sweep(spec.inputs["gap"], ("N", "gap"))

    fig, (ax_sum, ax_gap) = plt.subplots(1, 2, figsize=(8.2, 3.6))
    for name in entry_names:
        label = name if len(entry_names) > 1 else None
        ax_sum.plot(sums["N"], sums[name], marker=".", markersize=3,
                    linewidth=1.0, label=label)
    if len(entry_names) > 1:
        ax_sum.legend(fontsize=7)
    ax_gap.plot(gaps["N"], gaps["gap"], marker=".", markersize=3,
                linewidth=1.0, color="darkorange")
    ax_gap.axhline(0.0, color="gray", linewidth=0.8)
    for ax, xl, yl in zip((ax_sum, ax_gap), spec.xlabels, spec.ylabels):
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(spec.output_path, **_SAVE_KW)
    plt.close(fig)


def spec_fig3(input_dir: str, output_path: str) -> FigureSpec:
    if not os.path.isdir(input_dir):
        raise MissingInput(f"input directory not found: {input_dir}")
    return FigureSpec(
        name="fig3",
        inputs={
            "social": _require(os.path.join(input_dir, "social_weight.csv")),
            "game": _require(os.path.join(input_dir, "game_weight.csv")),
            "difference": _require(
                os.path.join(input_dir, "difference.csv")),
        },
        panels=(1, 2), xlabels=("t", "t"),
        ylabels=("quadratic weight", "game minus social"),
        output_path=output_path)


def render_fig3(spec: FigureSpec) -> None:
    """Left: both quadratic-weight trajectories. Right: their difference."""
    fig, (ax_w, ax_d) = plt.subplots(1, 2, figsize=(8.2, 3.6))
    for key, label, color in (("social", "social optimum", "steelblue"),
                              ("game", "game equilibrium", "darkorange")):
        t, vals, names = read_trajectory(spec.inputs[key])
        for k, name in enumerate(names):
            suffix = f" {name}" if len(names) > 1 else ""
            ax_w.plot(t, vals[:, k], label=label + suffix, color=color)
    ax_w.legend(fontsize=8)

    t, vals, names = read_trajectory(spec.inputs["difference"])
    _plot_entries(ax_d, t, vals, names, color="seagreen")
    ax_d.axhline(0.0, color="gray", linewidth=0.8)
    ax_d.plot([t[0]], [vals[0, 0]], marker="o", markersize=4,
              color="seagreen")
    for ax, xl, yl in zip((ax_w, ax_d), spec.xlabels, spec.ylabels):
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(spec.output_path, **_SAVE_KW)
    plt.close(fig)


_BUILDERS = {"fig1": (spec_fig1, render_fig1),
             "fig2": (spec_fig2, render_fig2),
             "fig3": (spec_fig3, render_fig3)}


def build_spec(figure_name: str, input_dir: str, output_path: str
               ) -> FigureSpec:
    """Resolve and validate inputs without drawing anything."""
    if figure_name not in _BUILDERS:
        raise ValueError(f"unknown figure {figure_name!r};"
                         f" expected one of {', '.join(FIGURE_NAMES)}")
    return _BUILDERS[figure_name][0](input_dir, output_path)


def render(figure_name: str, input_dir: str, output_path: str) -> str:
    """Render one figure from a run directory; returns output_path."""
    spec = build_spec(figure_name, input_dir, output_path)
    _BUILDERS[figure_name][1](spec)
    return output_path


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="render.py",
        description="Render a figure from mflq run artifacts.")
    parser.add_argument("figure_name", choices=FIGURE_NAMES)
    parser.add_argument("input_dir")
    parser.add_argument("output_path")
    args = parser.parse_args(argv)
    try:
        render(args.figure_name, args.input_dir, args.output_path)
    except (MissingInput, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
