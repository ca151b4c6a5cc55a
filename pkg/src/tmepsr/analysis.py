"""Post-training analyses and strategy grids.

Covers the gate-vs-interval regression, per-user alignment-weight summaries
with k-means clustering, the toggle ablation grid, gating/weighting strategy
sweeps, and the head-count sweep. All outputs are lists of dict rows ready
for CSV emission; every row carries the config hash and seed.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, replace

import numpy as np

from .data import Corpus, pad_sequences, split_leave_one_out
from .errors import DataError
from .lru import param_count
from .model import ExperimentConfig, ModelParams, evaluate, forward, train
from .alignment import mu_summary


# -- gate vs average interval -------------------------------------------------

@dataclass
class RegressionFit:
    slope: float
    intercept: float
    r: float
    degenerate: bool = False


def linear_fit(x: np.ndarray, y: np.ndarray) -> RegressionFit:
    """Least-squares line plus Pearson r; degenerate inputs report r=0."""
    if x.size < 2:
        raise DataError("need at least 2 points to fit")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return RegressionFit(slope=0.0, intercept=float(y.mean()), r=0.0,
                             degenerate=True)
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1])
    return RegressionFit(float(slope), float(intercept), r)


def user_gate_values(params: ModelParams, config: ExperimentConfig,
                     corpus: Corpus, batch: int = 256):
    """Per-user (mean raw gap seconds, gamma_rec, gamma_exp) on full sequences."""
    if config.effective_time_strategy != "gated":
        raise DataError("gate analysis requires the gated time strategy")
    rows = []
    seqs = corpus.sequences
    for lo in range(0, len(seqs), batch):
        chunk = seqs[lo:lo + batch]
        padded = pad_sequences(chunk, config.max_len)
        out = forward(padded, params, config)
        g_rec = out["gamma_rec"].data[:, 0]
        g_exp = out["gamma_exp"].data[:, 0]
        for i, s in enumerate(chunk):
            t = np.asarray(s.times, dtype=np.float64)
            tbar = float(np.diff(t).mean()) if len(t) > 1 else 0.0
            rows.append({"user_index": s.user_index, "t_bar": tbar,
                         "gamma_rec": float(g_rec[i]), "gamma_exp": float(g_exp[i])})
    return rows


def gamma_interval_analysis(params: ModelParams, config: ExperimentConfig,
                            corpus: Corpus) -> dict:
    rows = user_gate_values(params, config, corpus)
    if len(rows) < 3:
        raise DataError("need at least 3 users for the gate regression")
    t = np.array([r["t_bar"] for r in rows])
    fits = {"rec": linear_fit(t, np.array([r["gamma_rec"] for r in rows])),
            "exp": linear_fit(t, np.array([r["gamma_exp"] for r in rows]))}
    return {"points": rows, "fit_rec": fits["rec"], "fit_exp": fits["exp"]}


# -- alignment-weight summaries ----------------------------------------------

def user_mu_means(params: ModelParams, config: ExperimentConfig,
                  corpus: Corpus, batch: int = 256):
    """Per-user averaged step weights (mu_rec_bar, mu_exp_bar)."""
    from .model import total_loss
    rows = []
    seqs = corpus.sequences
    for lo in range(0, len(seqs), batch):
        chunk = seqs[lo:lo + batch]
        padded = pad_sequences(chunk, config.max_len)
        out = forward(padded, params, config)
        _, _ = total_loss(out, padded, params, config)
        if out["mu_rec"] is None:
            raise DataError("alignment weighting is disabled for this config")
        mu_r, mu_e = out["mu_rec"].data, out["mu_exp"].data
        for i, s in enumerate(chunk):
            n = min(len(s), config.max_len)
            mr, me = mu_summary(mu_r[i, :n], mu_e[i, :n])
            rows.append({"user_index": s.user_index, "mu_rec": mr, "mu_exp": me})
    return rows


def minmax_normalize(points: np.ndarray) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (points - lo) / span


def normalize_mu(points: np.ndarray) -> np.ndarray:
    """Min-max scaling of step weights in the log domain.

    The learned weights are sigmoid outputs that typically sit deep in the
    lower tail, where meaningful per-user differences are multiplicative;
    log-domain scaling keeps them resolvable.
    """
    if np.any(points < 0):
        raise DataError("step weights must be non-negative")
    return minmax_normalize(np.log(points + 1e-12))


# -- k-means ------------------------------------------------------------------

@dataclass
class ClusterResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator,
                 max_iter: int = 300, tol: float = 1e-9) -> ClusterResult:
    n = points.shape[0]
    # k-means++ seeding
    centroids = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([((points - c) ** 2).sum(axis=1) for c in centroids], axis=0)
        total = d2.sum()
        if total <= 0:
            centroids.append(points[rng.integers(n)])
            continue
        centroids.append(points[rng.choice(n, p=d2 / total)])
    centroids = np.array(centroids)

    history = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        history.append(inertia)
        new_centroids = centroids.copy()
        for c in range(k):
            members = points[assign == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    history.append(inertia)
    return ClusterResult(centroids, assign, inertia, history)


def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10) -> ClusterResult:
    """Lloyd iterations with k-means++ seeding; best inertia of `restarts`."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < k:
        raise DataError(f"need at least k={k} points, got {points.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = _kmeans_once(points, k, rng)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two partitions of the same set."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise DataError("label arrays must have equal length")
    n = a.size
    cats_a, inv_a = np.unique(a, return_inverse=True)
    cats_b, inv_b = np.unique(b, return_inverse=True)
    table = np.zeros((cats_a.size, cats_b.size), dtype=np.int64)
    np.add.at(table, (inv_a, inv_b), 1)
    comb = lambda x: x * (x - 1) // 2
    sum_ij = comb(table).sum()
    sum_a = comb(table.sum(axis=1)).sum()
    sum_b = comb(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0 if sum_ij == max_index else 0.0
    return float((sum_ij - expected) / (max_index - expected))


# -- experiment grids ---------------------------------------------------------

def _worker_count() -> int:
    raw = os.environ.get("TMEPSR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _train_eval(corpus: Corpus, config: ExperimentConfig) -> dict:
    params, _ = train(corpus, config)
    res = evaluate(params, config, corpus, split="test", k=10)
    return {"rec_recall": res["rec"]["recall"], "rec_ndcg": res["rec"]["ndcg"],
            "exp_recall": res["exp"]["recall"], "exp_ndcg": res["exp"]["ndcg"]}


def _run_grid(corpus: Corpus, configs: list[tuple[dict, ExperimentConfig]]) -> list[dict]:
    """Run (tag, config) cells, serially or on a worker pool (TMEPSR_THREADS)."""
    workers = min(_worker_count(), len(configs))
    if workers <= 1:
        results = [_train_eval(corpus, cfg) for _, cfg in configs]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_eval, itertools.repeat(corpus),
                                    [cfg for _, cfg in configs]))
    rows = []
    for (tag, cfg), metrics in zip(configs, results):
        rows.append({**tag, **metrics, "config_hash": cfg.hash(), "seed": cfg.seed})
    return rows


def ablation_grid(corpus: Corpus, base: ExperimentConfig) -> list[dict]:
    """All 2^3 toggle combinations under a shared seed and data."""
    cells = []
    for ta, mi_heads, ep in itertools.product((False, True), repeat=3):
        cfg = replace(base, time_aware=ta, multi_interest=mi_heads,
                      explanation_personalization=ep)
        tag = {"time_aware": ta, "multi_interest": mi_heads,
               "explanation_personalization": ep}
        cells.append((tag, cfg))
    return _run_grid(corpus, cells)


def gating_strategy_sweep(corpus: Corpus, base: ExperimentConfig) -> list[dict]:
    cells = [({"time_strategy": s}, replace(base, time_strategy=s, time_aware=True))
             for s in ("abs_only", "adj_only", "equal", "gated")]
    return _run_grid(corpus, cells)


def mi_strategy_sweep(corpus: Corpus, base: ExperimentConfig) -> list[dict]:
    cells = [({"mi_mode": s},
              replace(base, mi_mode=s, explanation_personalization=True))
             for s in ("fixed", "single_shared", "dynamic_dual")]
    return _run_grid(corpus, cells)


def head_sweep(corpus: Corpus, base: ExperimentConfig,
               d_list, h_lists) -> list[dict]:
    """Metrics and exact parameter counts per (d, H) pair."""
    cells = []
    for d, hs in zip(d_list, h_lists):
        for h in hs:
            cfg = replace(base, d=d, H=h)
            counts = param_count(d, h)
            tag = {"d": d, "H": h, "encoder_params_per_branch": counts["per_branch"],
                   "dominant_term": counts["dominant_term"]}
            cells.append((tag, cfg))
    return _run_grid(corpus, cells)
