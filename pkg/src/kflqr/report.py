"""Report rendering: delimited outputs plus matplotlib figures.

Every report-producing CLI command writes CSV files and renders the
matching figure next to them (Agg backend, PNG).  Column layouts are kept
flat and predictable so the CSVs feed straight into other plotting tools.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _comment(fh, provenance):
    if provenance:
        fh.write(f"# {provenance}\n")


def write_rollout_csv(path, times, x_true, x_kf, x_tl, provenance=None):
    """Columns: time, x*_true, x*_KF, x*_TL (predictions padded with nan
    if a rollout was truncated early).  An optional provenance string is
    written as a leading # comment, as in every delimited report."""
    d = x_true.shape[1]
    n = len(times)

    def pad(arr):
        out = np.full((n, d), np.nan)
        out[: min(n, len(arr))] = arr[:n]
        return out

    x_kf, x_tl = pad(x_kf), pad(x_tl)
    header = (
        ["time"]
        + [f"x{i + 1}_true" for i in range(d)]
        + [f"x{i + 1}_KF" for i in range(d)]
        + [f"x{i + 1}_TL" for i in range(d)]
    )
    with Path(path).open("w", newline="") as fh:
        _comment(fh, provenance)
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(n):
            writer.writerow(
                [repr(float(times[k]))]
                + [repr(float(v)) for v in x_true[k]]
                + [repr(float(v)) for v in x_kf[k]]
                + [repr(float(v)) for v in x_tl[k]]
            )


def render_rollout_figure(path, times, x_true, x_kf, x_tl, title=None, provenance=None):
    d = x_true.shape[1]
    fig, axes = plt.subplots(d, 1, figsize=(7, 2.4 * d), sharex=True)
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.plot(times, x_true[:, i], "k-", lw=1.6, label="true")
        ax.plot(times[: len(x_kf)], x_kf[:, i], "C0--", lw=1.4, label="KF")
        ax.plot(times[: len(x_tl)], x_tl[:, i], "C3:", lw=1.4, label="TL")
        ax.set_ylabel(f"x{i + 1}")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best", fontsize=9)
    axes[-1].set_xlabel("time [s]")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)


def write_rmse_summary(path, kf_report, tl_report, provenance=None):
    reduction = 100.0 * (1.0 - kf_report.mean / tl_report.mean) if tl_report.mean else 0.0
    pooled_reduction = (
        100.0 * (1.0 - kf_report.pooled / tl_report.pooled) if tl_report.pooled else 0.0
    )
    rows = [
        ("kf_mean", kf_report.mean),
        ("kf_variance", kf_report.variance),
        ("kf_max", kf_report.max),
        ("kf_median", kf_report.median),
        ("kf_pooled", kf_report.pooled),
        ("tl_mean", tl_report.mean),
        ("tl_variance", tl_report.variance),
        ("tl_max", tl_report.max),
        ("tl_median", tl_report.median),
        ("tl_pooled", tl_report.pooled),
        ("reduction_mean_percent", reduction),
        ("reduction_pooled_percent", pooled_reduction),
    ]
    with Path(path).open("w", newline="") as fh:
        _comment(fh, provenance)
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])
    return reduction


def render_rmse_figure(path, kf_report, tl_report, provenance=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.histogram_bin_edges(
        np.concatenate([kf_report.per_trajectory, tl_report.per_trajectory]), bins=30
    )
    ax.hist(tl_report.per_trajectory, bins=bins, alpha=0.55, label="TL", color="C3")
    ax.hist(kf_report.per_trajectory, bins=bins, alpha=0.55, label="KF", color="C0")
    ax.set_xlabel("per-trajectory RMSE")
    ax.set_ylabel("count")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)


def render_loss_figure(path, log, provenance=None):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(log.epoch, log.loss_pred, label="prediction")
    ax.semilogy(log.epoch, log.loss_rec, label="reconstruction")
    ax.semilogy(log.epoch, log.loss_se, label="equivalence")
    ax.semilogy(log.epoch, log.total, "k--", label="total")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (mean per sample)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)


def write_cost_csv(path, report, provenance=None):
    """One row per initial condition per controller."""
    with Path(path).open("w", newline="") as fh:
        _comment(fh, provenance)
        writer = csv.writer(fh)
        writer.writerow(
            ["ic_index", "controller", "x0_1", "x0_2", "j_total", "j_state",
             "j_control", "stable"]
        )
        for name, runs in (("KF", report.kf), ("TL", report.baseline)):
            for i, (x0, run) in enumerate(zip(report.ics, runs)):
                writer.writerow(
                    [i, name]
                    + [repr(float(v)) for v in x0]
                    + [repr(float(run.j_total)), repr(float(run.j_state)),
                       repr(float(run.j_control)), int(run.stable)]
                )


def write_cost_summary(path, report, provenance=None):
    """Reduction columns mirroring the cost-comparison table layout."""
    rows = [
        ("reduction_mean_j_percent", report.reduction_mean_j),
        ("reduction_var_ju_percent", report.reduction_var_ju),
        ("reduction_mean_ju_percent", report.reduction_mean_ju),
    ]
    rows += [(k, v) for k, v in sorted(report.summary.items())]
    with Path(path).open("w", newline="") as fh:
        _comment(fh, provenance)
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])


def render_cost_figure(path, report, provenance=None):
    j_kf = np.array([r.j_total for r in report.kf])
    j_tl = np.array([r.j_total for r in report.baseline])
    finite = np.isfinite(j_kf) & np.isfinite(j_tl)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    if finite.any():
        lim = max(j_kf[finite].max(), j_tl[finite].max()) * 1.05
        ax1.plot([0, lim], [0, lim], "k--", lw=1)
        ax1.plot(j_tl[finite], j_kf[finite], "C0o", ms=4, alpha=0.7)
        ax1.set_xlabel("TL cost J")
        ax1.set_ylabel("KF cost J")
        ax1.set_title("per-IC closed-loop cost")
        ax1.grid(alpha=0.3)
    ju_kf = np.array([r.j_control for r in report.kf])[finite]
    ju_tl = np.array([r.j_control for r in report.baseline])[finite]
    idx = np.arange(finite.sum())
    ax2.bar(idx - 0.2, ju_tl, width=0.4, color="C3", label="TL J_u")
    ax2.bar(idx + 0.2, ju_kf, width=0.4, color="C0", label="KF J_u")
    ax2.set_xlabel("initial condition")
    ax2.set_ylabel("control cost J_u")
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)


def render_closed_loop_figure(path, kf_run, tl_run, title=None, provenance=None):
    d = kf_run.states.shape[1]
    fig, axes = plt.subplots(d + 1, 1, figsize=(7, 2.2 * (d + 1)), sharex=True)
    for i in range(d):
        axes[i].plot(tl_run.times, tl_run.states[:, i], "C3:", lw=1.4, label="TL")
        axes[i].plot(kf_run.times, kf_run.states[:, i], "C0-", lw=1.4, label="KF")
        axes[i].set_ylabel(f"x{i + 1}")
        axes[i].grid(alpha=0.3)
    axes[0].legend(fontsize=9)
    axes[d].plot(tl_run.times, tl_run.inputs[:, 0], "C3:", lw=1.2, label="TL")
    axes[d].plot(kf_run.times, kf_run.inputs[:, 0], "C0-", lw=1.2, label="KF")
    axes[d].set_ylabel("u")
    axes[d].set_xlabel("time [s]")
    axes[d].grid(alpha=0.3)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)


def write_trajectory_csv(path, times, states, inputs=None, provenance=None):
    d = states.shape[1]
    header = ["time"] + [f"x{i + 1}" for i in range(d)]
    if inputs is not None:
        header += [f"u{i + 1}" for i in range(inputs.shape[1])]
    with Path(path).open("w", newline="") as fh:
        _comment(fh, provenance)
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(times)):
            row = [repr(float(times[k]))] + [repr(float(v)) for v in states[k]]
            if inputs is not None and k < len(inputs):
                row += [repr(float(v)) for v in inputs[k]]
            writer.writerow(row)


def render_trajectory_figure(path, times, states, model_states=None, title=None, provenance=None):
    d = states.shape[1]
    fig, axes = plt.subplots(d, 1, figsize=(7, 2.4 * d), sharex=True)
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.plot(times, states[:, i], "k-", lw=1.5, label="plant")
        if model_states is not None:
            ax.plot(times[: len(model_states)], model_states[:, i], "C0--",
                    lw=1.3, label="model")
        ax.set_ylabel(f"x{i + 1}")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=9)
    axes[-1].set_xlabel("time [s]")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=None if provenance is None else {"Description": provenance})
    plt.close(fig)
