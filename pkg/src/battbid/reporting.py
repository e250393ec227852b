"""Delimited exports and figure rendering for simulation results.

Every report artifact is written twice over: machine-readable CSV/JSON
with deterministic bytes (float repr, fixed column order, no
timestamps), and rendered matplotlib figures saved alongside them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .lattice import MarkovLattice
from .markets import Market
from .sddp import Policy
from .simulate import (
    ComboResult,
    SimBatch,
    comparison_table,
    direction_metric,
    feasibility_metric,
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# delimited outputs
# ---------------------------------------------------------------------------

def write_report_csv(results: list[ComboResult], path) -> None:
    header, cells = comparison_table(results)
    _write_rows(Path(path), header, cells)


def write_distribution_csv(batch: SimBatch, path) -> None:
    _write_rows(Path(path), ["revenue_eur"],
                [[float(v)] for v in batch.revenue_samples()])


def write_soc_csv(batch: SimBatch, path) -> None:
    rows = []
    for r, run in enumerate(batch.runs):
        for t, soc in enumerate(run.soc):
            rows.append([t, r, float(soc)])
    _write_rows(Path(path), ["stage", "run", "soc_mwh"], rows)


def write_bound_history_csv(policy: Policy, path) -> None:
    rows = [[int(it), float(b), float(f), float(s)]
            for it, b, f, s in policy.bound_history]
    _write_rows(Path(path), ["iteration", "upper_bound", "forward_value",
                             "slack_mwh"], rows)


def write_metrics_json(results: list[ComboResult], path,
                       extra: dict | None = None) -> None:
    doc: dict = {"combinations": {}}
    for res in results:
        batch = res.batch
        doc["combinations"][res.name] = {
            "markets": [m.value for m in res.markets],
            "direction": direction_metric(batch),
            "feasibility": feasibility_metric(batch),
            "mean_total_revenue_eur": float(np.mean(batch.revenue_samples())),
            "mean_penalty_eur": batch.mean(batch.run_penalty),
            "upper_bound_eur": res.policy.upper_bound,
            "train_iterations": res.policy.iterations,
            "train_stop_reason": res.policy.stop_reason,
            "unique_node_paths_sampled": res.policy.n_unique_node_paths,
            "train_lp_solves": res.policy.n_lp_solves,
            "simulation_lp_solves": batch.n_lp_solves,
            "id_constraints": batch.opts.id_constraints,
            "fcr_price_scale": batch.opts.fcr_price_scale,
        }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_elbow_csv(scan: list[tuple[int, float]], path) -> None:
    _write_rows(Path(path), ["k", "inertia"], [[k, float(v)] for k, v in scan])


def write_price_paths_csv(lattice: MarkovLattice, n_paths: int, seed: int,
                          path) -> None:
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(n_paths):
        node = lattice.sample_initial(rng)
        for t in range(1, lattice.n_stages + 1):
            if t > 1:
                node = lattice.sample_next(t - 1, node, rng)
            nd = lattice.nodes(t)[node]
            block = (t - 1) % 6
            rows.append([p, t, float(nd.da_prices[block]),
                         float(nd.id_levels[block][len(nd.id_probs) // 2]),
                         float(nd.fcr_prices[block])])
    _write_rows(Path(path), ["path", "stage", "da_eur_mwh", "id_eur_mwh",
                             "fcr_eur_mw"], rows)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def fig_convergence(policy: Policy, path, title: str = "") -> None:
    """Bound and simulated value against the iteration count."""
    hist = policy.bound_history
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(hist[:, 0], hist[:, 1], label="upper bound", color="tab:blue")
    ax.plot(hist[:, 0], hist[:, 2], label="forward value", color="tab:orange",
            alpha=0.6, linewidth=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective [EUR]")
    ax2 = ax.twinx()
    ax2.plot(hist[:, 0], hist[:, 3], label="slack", color="tab:red",
             linewidth=0.8, alpha=0.5)
    ax2.set_ylabel("storage violation [MWh]")
    lines, labels = ax.get_legend_handles_labels()
    l2, lab2 = ax2.get_legend_handles_labels()
    ax.legend(lines + l2, labels + lab2, loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_soc(batch: SimBatch, path, title: str = "") -> None:
    """Storage-level fan across simulation runs."""
    soc = batch.soc_matrix()
    stages = np.arange(soc.shape[1])
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for lo, hi, alpha in ((5, 95, 0.15), (25, 75, 0.3)):
        ax.fill_between(stages, np.percentile(soc, lo, axis=0),
                        np.percentile(soc, hi, axis=0),
                        color="tab:blue", alpha=alpha,
                        label=f"{lo}-{hi} percentile")
    ax.plot(stages, np.median(soc, axis=0), color="tab:blue", label="median")
    ax.axhline(batch.battery.capacity_mwh, color="k", linestyle=":",
               linewidth=0.8)
    ax.axhline(0.0, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("stage")
    ax.set_ylabel("state of charge [MWh]")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_revenue_distributions(results: list[ComboResult], path) -> None:
    """Violin plot of run revenues per market combination."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    data = [res.batch.revenue_samples() for res in results]
    ax.violinplot(data, showmedians=True)
    ax.set_xticks(range(1, len(results) + 1))
    ax.set_xticklabels([r.name for r in results], rotation=30, fontsize=8)
    ax.set_ylabel("revenue [EUR]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_market_comparison(results: list[ComboResult], path) -> None:
    """Mean revenue per market, stacked by combination."""
    names = [r.name for r in results]
    x = np.arange(len(results))
    fig, ax = plt.subplots(figsize=(8, 4.5))
    bottom_pos = np.zeros(len(results))
    bottom_neg = np.zeros(len(results))
    colors = {Market.FCR: "tab:green", Market.ID: "tab:orange",
              Market.DA: "tab:blue"}
    for m in (Market.FCR, Market.ID, Market.DA):
        vals = np.array([
            r.batch.mean(r.batch.run_revenue, m) if m in r.markets else 0.0
            for r in results])
        base = np.where(vals >= 0, bottom_pos, bottom_neg)
        ax.bar(x, vals, bottom=base, label=m.value, color=colors[m], width=0.6)
        bottom_pos += np.where(vals >= 0, vals, 0.0)
        bottom_neg += np.where(vals < 0, vals, 0.0)
    pen = np.array([-r.batch.mean(r.batch.run_penalty) for r in results])
    ax.bar(x, pen, bottom=bottom_neg, label="penalty", color="tab:red", width=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, fontsize=8)
    ax.set_ylabel("mean revenue [EUR]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_elbow(scan: list[tuple[int, float]], path, title: str = "") -> None:
    ks = [k for k, _ in scan]
    inertia = [v for _, v in scan]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, inertia, marker="o")
    ax.set_xlabel("clusters k")
    ax.set_ylabel("inertia")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def fig_price_paths(lattice: MarkovLattice, n_paths: int, seed: int,
                    outdir, prefix: str = "paths") -> list[Path]:
    """Sampled discrete price paths per market, one figure each."""
    rng = np.random.default_rng(seed)
    T = lattice.n_stages
    da = np.zeros((n_paths, T))
    idp = np.zeros((n_paths, T))
    fcr = np.zeros((n_paths, T))
    for p in range(n_paths):
        node = lattice.sample_initial(rng)
        for t in range(1, T + 1):
            if t > 1:
                node = lattice.sample_next(t - 1, node, rng)
            nd = lattice.nodes(t)[node]
            block = (t - 1) % 6
            da[p, t - 1] = nd.da_prices[block]
            j = rng.choice(len(nd.id_probs), p=nd.id_probs)
            idp[p, t - 1] = nd.id_levels[block][j]
            fcr[p, t - 1] = nd.fcr_prices[block]
    out = []
    for name, series, unit in (("da", da, "EUR/MWh"), ("id", idp, "EUR/MWh"),
                               ("fcr", fcr, "EUR/MW")):
        fig, ax = plt.subplots(figsize=(7, 4))
        for p in range(n_paths):
            ax.plot(range(1, T + 1), series[p], alpha=0.5, linewidth=0.8)
        ax.set_xlabel("stage")
        ax.set_ylabel(f"{name} price [{unit}]")
        fig.tight_layout()
        path = Path(outdir) / f"{prefix}_{name}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        out.append(path)
    return out
