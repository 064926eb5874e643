"""Render study tables and diagnostics to image files next to the CSV output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .treegraph import TreeGraph, path_to_source

_DPI = 150


def _save(fig, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def save_consistency_figure(rows: list[dict], path) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    groups = sorted({r["group"] for r in rows})
    for g in groups:
        pts = sorted((r["n"], r["mse_x100"]) for r in rows if r["group"] == g)
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], marker="o", label=g)
    ax.set_xlabel("n")
    ax.set_ylabel("MSE x 100")
    ax.set_title("Parameter error vs sample size")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def save_coverage_figure(rows: list[dict], path, level: float = 0.95) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    groups = [r["group"] for r in rows]
    cov = [r["coverage"] for r in rows]
    ax.bar(groups, cov, color="#4878cf")
    ax.axhline(level, color="k", linestyle="--", linewidth=1, label=f"nominal {level:.2f}")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("coverage")
    ax.set_title("Bootstrap interval coverage")
    ax.legend()
    return _save(fig, path)


def save_recovery_figure(rows: list[dict], path) -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    methods = sorted({r["method"] for r in rows})
    ns = sorted({r["n"] for r in rows})
    width = 0.8 / max(len(methods), 1)
    for mi, method in enumerate(methods):
        fracs = []
        for n in ns:
            total = sum(r["count"] for r in rows if r["method"] == method and r["n"] == n)
            hit = sum(r["count"] for r in rows if r["method"] == method and r["n"] == n and r["is_true"])
            fracs.append(hit / total if total else 0.0)
        xs = np.arange(len(ns)) + mi * width
        ax.bar(xs, fracs, width=width, label=method)
    ax.set_xticks(np.arange(len(ns)) + width * (len(methods) - 1) / 2)
    ax.set_xticklabels([str(n) for n in ns])
    ax.set_xlabel("n")
    ax.set_ylabel("true-tree recovery rate")
    ax.set_ylim(0, 1.05)
    ax.set_title("Graph selection recovery")
    ax.legend()
    return _save(fig, path)


def save_bootstrap_figure(names: list[str], values: np.ndarray, path, max_params: int = 12) -> str:
    take = min(len(names), max_params)
    cols = 4
    rows_n = (take + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(3 * cols, 2.4 * rows_n), squeeze=False)
    for i in range(rows_n * cols):
        ax = axes[i // cols][i % cols]
        if i >= take:
            ax.axis("off")
            continue
        ax.hist(values[:, i], bins=30, color="#4878cf")
        ax.set_title(names[i], fontsize=8)
        ax.tick_params(labelsize=7)
    fig.suptitle("Bootstrap replicate distributions")
    fig.tight_layout()
    return _save(fig, path)


def save_sweep_figure(rows: list[dict], path) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    by_tree: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        rho = [float(v) for v in str(r["rho"]).split(",")]
        # one-dimensional display axis: the first varying coordinate, else the norm
        by_tree.setdefault(r["tree"], []).append((rho, r["value"]))
    for tree_id, pts in sorted(by_tree.items()):
        rhos = np.array([p[0] for p in pts])
        varying = np.nonzero(rhos.std(axis=0) > 0)[0]
        axis = varying[0] if varying.size else 0
        xs = rhos[:, axis]
        ys = [p[1] for p in pts]
        order = np.argsort(xs)
        ax.plot(np.asarray(xs)[order], np.asarray(ys)[order], marker="o", label=f"tree {tree_id}")
        ax.set_xlabel(f"rho[{axis + 1}]")
    ax.set_ylabel("functional")
    ax.set_title("Sensitivity sweep")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def save_kde_figure(rows: list[dict], path) -> str:
    pattern_dims = sorted({(r["pattern"], r["dim"]) for r in rows})
    cols = 3
    rows_n = (len(pattern_dims) + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(3.6 * cols, 2.6 * rows_n), squeeze=False)
    for i, (pattern, dim) in enumerate(pattern_dims):
        ax = axes[i // cols][i % cols]
        for estimator in ("oracle", "tree", "complete-case", "available-case"):
            pts = [(r["x"], r["density"]) for r in rows if r["pattern"] == pattern and r["dim"] == dim and r["estimator"] == estimator]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], label=estimator, linewidth=1.2)
        ax.set_title(f"pattern {pattern}, x{dim}", fontsize=9)
        ax.tick_params(labelsize=7)
    for i in range(len(pattern_dims), rows_n * cols):
        axes[i // cols][i % cols].axis("off")
    axes[0][0].legend(fontsize=7)
    fig.suptitle("Per-pattern marginal density estimates")
    fig.tight_layout()
    return _save(fig, path)


def save_tree_figure(tree: TreeGraph, path) -> str:
    """Layer patterns by depth and draw parent-child arrows."""
    depths = {r: len(path_to_source(tree, r)) - 1 for r in tree.patterns}
    levels: dict[int, list] = {}
    for r, dep in sorted(depths.items(), key=lambda kv: str(kv[0])):
        levels.setdefault(dep, []).append(r)
    pos = {}
    for dep, nodes in levels.items():
        for i, r in enumerate(nodes):
            pos[r] = (i - (len(nodes) - 1) / 2.0, -dep)
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * max(len(v) for v in levels.values()), 1.5 + 1.2 * len(levels)))
    for c, p in tree.edges:
        x0, y0 = pos[p]
        x1, y1 = pos[c]
        ax.annotate("", xy=(x1, y1 + 0.12), xytext=(x0, y0 - 0.12), arrowprops=dict(arrowstyle="->", color="gray"))
    for r, (x, y) in pos.items():
        ax.text(x, y, str(r), ha="center", va="center", fontsize=10,
                bbox=dict(boxstyle="round,pad=0.3", fc="#dbe9f6", ec="#4878cf"))
    ax.set_xlim(min(x for x, _ in pos.values()) - 1, max(x for x, _ in pos.values()) + 1)
    ax.set_ylim(min(y for _, y in pos.values()) - 0.6, 0.6)
    ax.axis("off")
    return _save(fig, path)
