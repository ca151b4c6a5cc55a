"""Full dual-branch model: forward pass, objective, Adam trainer, evaluation.

Both branches share the pipeline base-embed -> time-encode -> multihead
recurrence -> tied-weight prediction. The item and explanation lookup tables
are reused as the prediction projections (single storage), so only the two
bias vectors are branch-specific at the output layer.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import alignment, time_encoder
from .data import Batch, Corpus, make_batches, pad_sequences, split_leave_one_out
from .errors import ConfigError, DataError, NumericError
from .lru import encode_branch, init_head
from .metrics import ndcg_at_k, rank_topk, recall_at_k
from .tensor import (Tensor, add, matmul, reshape, softmax_cross_entropy,
                     transpose2d)


@dataclass
class ExperimentConfig:
    alpha: float = 0.9
    beta: float = 0.1
    d: int = 50
    H: int = 2
    max_len: int = 50
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    time_strategy: str = "gated"
    mi_mode: str = "dynamic_dual"
    lru_mode: str = "sequential"
    mi_candidates: str = "full"
    mi_sample_size: int = 100
    lru_normalize: bool = True
    time_aware: bool = True
    multi_interest: bool = True
    explanation_personalization: bool = True
    mask_seen: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.d % self.H != 0:
            raise ConfigError(f"H={self.H} must divide d={self.d}")
        if self.time_strategy not in time_encoder.TIME_STRATEGIES:
            raise ConfigError(f"invalid time_strategy {self.time_strategy!r}")
        if self.mi_mode not in alignment.MI_MODES:
            raise ConfigError(f"invalid mi_mode {self.mi_mode!r}")
        if self.lru_mode not in ("sequential", "scan"):
            raise ConfigError(f"invalid lru_mode {self.lru_mode!r}")
        if self.mi_candidates not in ("full", "sampled"):
            raise ConfigError(f"invalid mi_candidates {self.mi_candidates!r}")

    # toggles route around disabled components
    @property
    def effective_time_strategy(self) -> str:
        return self.time_strategy if self.time_aware else "disabled"

    @property
    def effective_heads(self) -> int:
        return self.H if self.multi_interest else 1

    @property
    def effective_mi_mode(self) -> str:
        return self.mi_mode if self.explanation_personalization else "disabled"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        valid = {f.name for f in fields(cls)}
        unknown = set(d) - valid
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}; "
                              f"valid keys: {sorted(valid)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class ModelParams:
    """All learnable tensors, addressable by name for the optimizer."""

    def __init__(self, config: ExperimentConfig, n_items: int, n_expls: int):
        rng = np.random.default_rng(config.seed)
        d, heads = config.d, config.effective_heads
        m = d // heads
        self.config = config
        self.n_items, self.n_expls = n_items, n_expls
        self.M_V = Tensor(rng.normal(0.0, 0.01, size=(n_items, d)), requires_grad=True)
        self.M_E = Tensor(rng.normal(0.0, 0.01, size=(n_expls, d)), requires_grad=True)
        self.gru_adj = time_encoder.init_gru(d, rng)
        self.gru_abs = time_encoder.init_gru(d, rng)
        self.gate_rec = time_encoder.init_gate_mlp(d, d, rng)
        self.gate_exp = time_encoder.init_gate_mlp(d, d, rng)
        self.heads_rec = [self._head_tensors(m, rng, config.lru_normalize)
                          for _ in range(heads)]
        self.heads_exp = [self._head_tensors(m, rng, config.lru_normalize)
                          for _ in range(heads)]
        self.mi = alignment.init_mi(d, rng)
        self.b_rec = Tensor(np.zeros((1, n_items)), requires_grad=True)
        self.b_exp = Tensor(np.zeros((1, n_expls)), requires_grad=True)

    @staticmethod
    def _head_tensors(m: int, rng: np.random.Generator, normalize: bool) -> dict:
        hp = init_head(m, rng, normalize)
        return {"nu": Tensor(hp.nu, requires_grad=True),
                "theta": Tensor(hp.theta, requires_grad=True),
                "U": Tensor(hp.U, requires_grad=True),
                "normalize": normalize}

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"M_V": self.M_V, "M_E": self.M_E,
               "b_rec": self.b_rec, "b_exp": self.b_exp}
        for gname, gru in (("gru_adj", self.gru_adj), ("gru_abs", self.gru_abs)):
            for k, v in gru.tensors().items():
                out[f"{gname}.{k}"] = v
        for gname, mlp in (("gate_rec", self.gate_rec), ("gate_exp", self.gate_exp)):
            for k, v in mlp.tensors().items():
                out[f"{gname}.{k}"] = v
        for branch, heads in (("rec", self.heads_rec), ("exp", self.heads_exp)):
            for h, head in enumerate(heads):
                for k in ("nu", "theta", "U"):
                    out[f"head_{branch}_{h}.{k}"] = head[k]
        out.update(self.mi.tensors())
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    def clone(self) -> "ModelParams":
        other = ModelParams(self.config, self.n_items, self.n_expls)
        for (_, src), (_, dst) in zip(self.named_parameters().items(),
                                      other.named_parameters().items()):
            dst.data = src.data.copy()
        return other


# -- forward / loss ----------------------------------------------------------

def forward(batch: Batch, params: ModelParams, config: ExperimentConfig) -> dict:
    """Run the full pipeline on a padded batch.

    Returns logits per branch (B, L, C), hidden states, step weights (set by
    the loss when alignment is active), and the gate values.
    """
    te = time_encoder.time_aware_embed(
        batch.items, batch.expls, batch.times, batch.mask, batch.lengths,
        M_V=params.M_V, M_E=params.M_E,
        gru_adj=params.gru_adj, gru_abs=params.gru_abs,
        gate_rec=params.gate_rec, gate_exp=params.gate_exp,
        alpha=config.alpha, beta=config.beta,
        strategy=config.effective_time_strategy)

    # zero inputs at padded steps so the recurrence sees no sentinel rows
    mask3 = Tensor(batch.mask.astype(np.float64)[:, :, None])
    x_rec = te["E_rec_time"] * mask3
    x_exp = te["E_exp_time"] * mask3
    z_rec = encode_branch(params.heads_rec, x_rec, mode=config.lru_mode)
    z_exp = encode_branch(params.heads_exp, x_exp, mode=config.lru_mode)

    logits_rec = add(matmul(z_rec, transpose2d(params.M_V)), params.b_rec)
    logits_exp = add(matmul(z_exp, transpose2d(params.M_E)), params.b_exp)
    return {"logits_rec": logits_rec, "logits_exp": logits_exp,
            "Z_rec": z_rec, "Z_exp": z_exp,
            "gamma_rec": te["gamma_rec"], "gamma_exp": te["gamma_exp"]}


def shifted_targets(batch: Batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Next-step targets: position j predicts step j+1; the final valid step
    of each row has no target and is masked out."""
    items = np.roll(batch.items, -1, axis=1)
    expls = np.roll(batch.expls, -1, axis=1)
    target_mask = batch.mask.copy()
    for b, n in enumerate(batch.lengths):
        target_mask[b, n - 1:] = False
    return items, expls, target_mask


def subsample_candidates(table: Tensor, positives: np.ndarray, mask: np.ndarray,
                         sample_size: int, rng: np.random.Generator):
    """Candidate subset for the contrastive denominator: all in-batch
    positives plus uniform negatives, with positives remapped into it."""
    from .tensor import gather_rows
    pos = np.unique(positives[mask])
    extra = rng.integers(0, table.shape[0], size=sample_size)
    cand = np.unique(np.concatenate([pos, extra]))
    remap = np.zeros(table.shape[0], dtype=np.int64)
    remap[cand] = np.arange(cand.size)
    return gather_rows(table, cand), remap[positives]


def total_loss(out: dict, batch: Batch, params: ModelParams,
               config: ExperimentConfig,
               rng: np.random.Generator | None = None) -> tuple[Tensor, dict]:
    """L = cross-entropy(rec) + cross-entropy(exp) + weighted alignment."""
    tgt_items, tgt_expls, tmask = shifted_targets(batch)
    B, L = batch.items.shape
    flat_rec = reshape(out["logits_rec"], (B * L, params.n_items))
    flat_exp = reshape(out["logits_exp"], (B * L, params.n_expls))
    l_rec = softmax_cross_entropy(flat_rec, tgt_items.reshape(-1), tmask.reshape(-1))
    l_exp = softmax_cross_entropy(flat_exp, tgt_expls.reshape(-1), tmask.reshape(-1))

    mi_table_v, mi_table_e = params.M_V, params.M_E
    mi_pos_items, mi_pos_expls = tgt_items, tgt_expls
    if (config.mi_candidates == "sampled"
            and config.effective_mi_mode != "disabled"):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        mi_table_v, mi_pos_items = subsample_candidates(
            params.M_V, tgt_items, tmask, config.mi_sample_size, rng)
        mi_table_e, mi_pos_expls = subsample_candidates(
            params.M_E, tgt_expls, tmask, config.mi_sample_size, rng)
    j, detail = alignment.mi_objective(
        params.mi, out["Z_rec"], out["Z_exp"], mi_table_v, mi_table_e,
        mi_pos_items, mi_pos_expls, tmask, mode=config.effective_mi_mode)

    total = add(add(l_rec, l_exp), j)
    parts = {"L_rec": l_rec.item(), "L_exp": l_exp.item(), "J_MI": j.item(),
             "total": total.item()}
    out["mu_rec"], out["mu_exp"] = detail.get("mu_rec"), detail.get("mu_exp")
    return total, parts


# -- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- training loop -----------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ndcg: float = -1.0


def train(corpus: Corpus, config: ExperimentConfig,
          log=None, keep: str = "best") -> tuple[ModelParams, TrainReport]:
    """Adam training with per-epoch leave-one-out validation.

    keep="best" returns the parameters of the best validation NDCG epoch
    (mean of the two tasks); keep="last" returns the final-epoch state,
    which is what trajectory-sensitive analyses should use.
    """
    if keep not in ("best", "last"):
        raise ConfigError(f"invalid keep {keep!r}")
    splits = [split_leave_one_out(s) for s in corpus.sequences]
    train_seqs = [sp.train for sp in splits]
    params = ModelParams(config, corpus.n_items, corpus.n_expls)
    opt = Adam(params.named_parameters(), config.learning_rate,
               config.adam_beta1, config.adam_beta2, config.adam_eps,
               config.weight_decay)
    report = TrainReport()
    best = params.clone()
    mi_rng = np.random.default_rng(config.seed + 777)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        batches = make_batches(train_seqs, config.batch_size, config.max_len,
                               seed=config.seed * 10007 + epoch)
        sums = {"L_rec": 0.0, "L_exp": 0.0, "J_MI": 0.0, "total": 0.0}
        for bi, batch in enumerate(batches):
            params.zero_grad()
            out = forward(batch, params, config)
            loss, parts = total_loss(out, batch, params, config, rng=mi_rng)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {bi}")
            loss.backward()
            opt.step()
            for k in sums:
                sums[k] += parts[k]
        nb = max(len(batches), 1)
        val_k = min(10, corpus.n_items, corpus.n_expls)
        val = evaluate(params, config, corpus, split="valid", k=val_k)
        row = {"epoch": epoch,
               **{k: v / nb for k, v in sums.items()},
               "val_rec_recall": val["rec"]["recall"],
               "val_rec_ndcg": val["rec"]["ndcg"],
               "val_exp_recall": val["exp"]["recall"],
               "val_exp_ndcg": val["exp"]["ndcg"],
               "seconds": time.perf_counter() - t0}
        report.epochs.append(row)
        score = 0.5 * (val["rec"]["ndcg"] + val["exp"]["ndcg"])
        if score > report.best_val_ndcg:
            report.best_val_ndcg = score
            report.best_epoch = epoch
            best = params.clone()
        if log:
            log(row)
    return (params if keep == "last" else best), report


# -- inference / evaluation --------------------------------------------------

def last_position_scores(params: ModelParams, config: ExperimentConfig,
                         sequences) -> tuple[np.ndarray, np.ndarray]:
    """Scores of the step after each sequence's last valid position,
    batched over users; returns (rec_scores, exp_scores) as (B, C)."""
    batch = pad_sequences(sequences, config.max_len)
    out = forward(batch, params, config)
    idx = batch.lengths - 1
    rows = np.arange(len(sequences))
    return (out["logits_rec"].data[rows, idx, :],
            out["logits_exp"].data[rows, idx, :])


def predict_topk(params: ModelParams, config: ExperimentConfig,
                 sequence, k: int, task: str = "rec") -> list[int]:
    """Top-k next-step predictions from one sequence prefix."""
    rec, exp = last_position_scores(params, config, [sequence])
    scores = rec[0] if task == "rec" else exp[0]
    return list(rank_topk(scores, k))


def evaluate(params: ModelParams, config: ExperimentConfig, corpus: Corpus,
             split: str = "test", k: int = 10, eval_batch: int = 256) -> dict:
    """Macro-averaged Recall@K / NDCG@K over users for both tasks.

    split="valid" predicts from the train prefix; split="test" additionally
    appends the validation interaction to the prefix.
    """
    if split not in ("valid", "test"):
        raise ConfigError(f"split must be valid|test, got {split!r}")
    splits = [split_leave_one_out(s) for s in corpus.sequences]
    prefixes, targets = [], []
    for sp in splits:
        if split == "valid":
            prefixes.append(sp.train)
            targets.append(sp.valid_target)
        else:
            ext = copy.deepcopy(sp.train)
            ext.items.append(sp.valid_target[0])
            ext.expls.append(sp.valid_target[1])
            ext.times.append(sp.valid_target[2])
            prefixes.append(ext)
            targets.append(sp.test_target)
    if not prefixes:
        raise DataError("no users to evaluate")

    acc = {"rec": {"recall": 0.0, "ndcg": 0.0}, "exp": {"recall": 0.0, "ndcg": 0.0}}
    for lo in range(0, len(prefixes), eval_batch):
        chunk = prefixes[lo:lo + eval_batch]
        rec_scores, exp_scores = last_position_scores(params, config, chunk)
        for row, (seq, tgt) in enumerate(zip(chunk, targets[lo:lo + eval_batch])):
            if config.mask_seen:
                rec_scores[row, np.asarray(seq.items, dtype=int)] = -1e18
                exp_scores[row, np.asarray(seq.expls, dtype=int)] = -1e18
            for task, scores, truth in (("rec", rec_scores[row], tgt[0]),
                                        ("exp", exp_scores[row], tgt[1])):
                topk = list(rank_topk(scores, k))
                acc[task]["recall"] += recall_at_k(topk, [truth], k)
                acc[task]["ndcg"] += ndcg_at_k(topk, [truth], k)
    n = len(prefixes)
    return {task: {"recall": acc[task]["recall"] / n,
                   "ndcg": acc[task]["ndcg"] / n,
                   "users": n, "K": k}
            for task in ("rec", "exp")}


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(path, params: ModelParams) -> None:
    """JSON manifest (config, vocab sizes, hash) plus one npz of arrays."""
    arrays = {k: p.data for k, p in params.named_parameters().items()}
    np.savez(str(path) + ".npz", **arrays)
    manifest = {"format_version": 1,
                "config": params.config.to_dict(),
                "config_hash": params.config.hash(),
                "n_items": params.n_items, "n_expls": params.n_expls}
    with open(str(path) + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(path) -> ModelParams:
    with open(str(path) + ".json") as fh:
        manifest = json.load(fh)
    config = ExperimentConfig.from_dict(manifest["config"])
    params = ModelParams(config, manifest["n_items"], manifest["n_expls"])
    arrays = np.load(str(path) + ".npz")
    for k, p in params.named_parameters().items():
        p.data = arrays[k].astype(np.float64)
    return params
