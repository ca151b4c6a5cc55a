"""Contrastive alignment between the two branches with learned step weights.

Each branch contributes an InfoNCE-style loss built from a bilinear
similarity between the opposite branch's hidden state and the candidate
embedding table; two per-step sigmoid weights decide how strongly each
branch's loss enters the objective for that sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .tensor import (Tensor, add, concat_last, matmul, mul, reshape, scale,
                     sigmoid, softmax_cross_entropy_rows, transpose2d, tsum)
from .time_encoder import GateMlpParams, init_gate_mlp, mlp_scalar

MI_MODES = ("dynamic_dual", "fixed", "single_shared", "disabled")
FIXED_MI_WEIGHT = 0.001
# Global coefficient for the learned-weight modes: the per-step weights set
# the *relative* per-user emphasis, while this keeps the auxiliary objective
# small against the two primary cross-entropy terms (weights start near 0.5,
# so the initial magnitude matches the fixed mode).
DYNAMIC_MI_SCALE = 2.0 * FIXED_MI_WEIGHT


@dataclass
class MiParams:
    Lambda_rec: Tensor           # (d, d) bilinear form, item table vs Z_exp
    Lambda_exp: Tensor           # (d, d) bilinear form, expl table vs Z_rec
    mlp_rec: GateMlpParams       # d -> d -> 1 weight head on Z_rec
    mlp_exp: GateMlpParams       # d -> d -> 1 weight head on Z_exp
    mlp_shared: GateMlpParams    # 2d -> d -> 1, used only in single_shared mode

    def tensors(self) -> dict:
        out = {"Lambda_rec": self.Lambda_rec, "Lambda_exp": self.Lambda_exp}
        for name, mlp in (("mi_mlp_rec", self.mlp_rec), ("mi_mlp_exp", self.mlp_exp),
                          ("mi_mlp_shared", self.mlp_shared)):
            for k, v in mlp.tensors().items():
                out[f"{name}.{k}"] = v
        return out


def init_mi(d: int, rng: np.random.Generator) -> MiParams:
    s = 1.0 / np.sqrt(d)
    return MiParams(
        Lambda_rec=Tensor(rng.uniform(-s, s, size=(d, d)), requires_grad=True),
        Lambda_exp=Tensor(rng.uniform(-s, s, size=(d, d)), requires_grad=True),
        mlp_rec=init_gate_mlp(d, d, rng),
        mlp_exp=init_gate_mlp(d, d, rng),
        mlp_shared=init_gate_mlp(2 * d, d, rng),
    )


def mi_weights(params: MiParams, z_rec: Tensor, z_exp: Tensor) -> tuple[Tensor, Tensor]:
    """Per-step weights in (0, 1): sigma(MLP(Z_i)) for each branch.

    Inputs are (..., d); results drop the trailing singleton, shape (...,).
    """
    mu_rec = sigmoid(mlp_scalar(params.mlp_rec, z_rec))
    mu_exp = sigmoid(mlp_scalar(params.mlp_exp, z_exp))
    return (reshape(mu_rec, mu_rec.shape[:-1]), reshape(mu_exp, mu_exp.shape[:-1]))


def nce_logits(z_other: Tensor, table: Tensor, lam: Tensor) -> Tensor:
    """Bilinear candidate scores table_c . Lambda . z per step, (..., C)."""
    projected = matmul(z_other, transpose2d(lam))     # rows are (Lambda z)^T
    return matmul(projected, transpose2d(table))


def branch_info_nce(z_other: Tensor, table: Tensor, lam: Tensor,
                    positives, mask) -> Tensor:
    """Scalar InfoNCE loss: mean over valid steps of -log softmax at the
    positive candidate. z_other is (n, d) or (B, L, d)."""
    per_seq, counts = branch_info_nce_per_sequence(z_other, table, lam, positives, mask)
    total = tsum(mul(per_seq, Tensor(counts.astype(np.float64))))
    return scale(total, 1.0 / counts.sum())


def branch_info_nce_per_sequence(z_other: Tensor, table: Tensor, lam: Tensor,
                                 positives, mask) -> tuple[Tensor, np.ndarray]:
    """Per-sequence masked-mean InfoNCE losses, shape (B,), plus valid counts.

    A 2-D z_other is treated as a single sequence.
    """
    positives = np.asarray(positives, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    squeeze = z_other.data.ndim == 2
    if squeeze:
        z_other = reshape(z_other, (1,) + z_other.shape)
        positives = positives[None, :]
        mask = mask[None, :]
    B, L, _ = z_other.shape
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise DataError("sequence with no valid steps in contrastive loss")
    logits = nce_logits(z_other, table, lam)
    flat = reshape(logits, (B * L, logits.shape[-1]))
    # clamp padded targets into range; their rows are zeroed by the mask
    safe_pos = np.where(mask, positives, 0).reshape(-1)
    rows = softmax_cross_entropy_rows(flat, safe_pos)
    masked = mul(reshape(rows, (B, L)), Tensor(mask.astype(np.float64)))
    per_seq = mul(tsum(masked, axis=1), Tensor(1.0 / counts.astype(np.float64)))
    return per_seq, counts


def masked_step_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over the step axis of a (B, L) tensor -> (B,)."""
    counts = mask.sum(axis=1).astype(np.float64)
    summed = tsum(mul(values, Tensor(mask.astype(np.float64))), axis=1)
    return mul(summed, Tensor(1.0 / counts))


def mi_objective(params: MiParams, z_rec: Tensor, z_exp: Tensor,
                 M_V: Tensor, M_E: Tensor,
                 item_positives, expl_positives, mask,
                 mode: str = "dynamic_dual") -> tuple[Tensor, dict]:
    """Weighted alignment objective for one padded batch (mean over sequences).

    Modes: dynamic_dual (two per-step weight heads), fixed (constant 0.001),
    single_shared (one weight head on both states), disabled (exact zero).
    Returns the scalar objective plus a detail dict with the per-branch
    losses and, when applicable, the step weights.
    """
    if mode not in MI_MODES:
        raise ConfigError(f"unknown mi mode {mode!r}; valid: {', '.join(MI_MODES)}")
    detail: dict = {"mu_rec": None, "mu_exp": None}
    if mode == "disabled":
        return Tensor(0.0), detail

    mask = np.asarray(mask, dtype=bool)
    j_rec, _ = branch_info_nce_per_sequence(z_exp, M_V, params.Lambda_rec,
                                            item_positives, mask)
    j_exp, _ = branch_info_nce_per_sequence(z_rec, M_E, params.Lambda_exp,
                                            expl_positives, mask)
    detail["j_rec"] = float(j_rec.data.mean())
    detail["j_exp"] = float(j_exp.data.mean())
    B = j_rec.shape[0]

    if mode == "fixed":
        per_seq = scale(add(j_rec, j_exp), FIXED_MI_WEIGHT)
    elif mode == "single_shared":
        joint = concat_last([z_rec, z_exp])
        mu = sigmoid(mlp_scalar(params.mlp_shared, joint))
        mu = reshape(mu, mu.shape[:-1])
        mu_bar = masked_step_mean(mu, mask)
        per_seq = scale(mul(mu_bar, add(j_rec, j_exp)), DYNAMIC_MI_SCALE)
        detail["mu_rec"] = detail["mu_exp"] = mu
    else:  # dynamic_dual
        mu_rec, mu_exp = mi_weights(params, z_rec, z_exp)
        per_seq = scale(add(mul(masked_step_mean(mu_rec, mask), j_rec),
                            mul(masked_step_mean(mu_exp, mask), j_exp)),
                        DYNAMIC_MI_SCALE)
        detail["mu_rec"], detail["mu_exp"] = mu_rec, mu_exp
    return scale(tsum(per_seq), 1.0 / B), detail


def j_mi(mu_rec, mu_exp, j_rec: float, j_exp: float, mask,
         mode: str = "dynamic_dual", mu_shared=None) -> float:
    """Single-sequence weighted objective on plain arrays (no gradients).

    mu_* are per-step arrays; j_* are the per-branch scalar losses.
    """
    if mode not in MI_MODES:
        raise ConfigError(f"unknown mi mode {mode!r}")
    if mode == "disabled":
        return 0.0
    if mode == "fixed":
        return FIXED_MI_WEIGHT * (j_rec + j_exp)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("all steps masked")
    if mode == "single_shared":
        mu = np.asarray(mu_shared, dtype=np.float64)
        return float(mu[mask].mean() * (j_rec + j_exp))
    mu_r = np.asarray(mu_rec, dtype=np.float64)
    mu_e = np.asarray(mu_exp, dtype=np.float64)
    return float(mu_r[mask].mean() * j_rec + mu_e[mask].mean() * j_exp)


def mu_summary(mu_rec_steps, mu_exp_steps) -> tuple[float, float]:
    """Per-user average weights over valid steps, one pair per user."""
    mu_r = np.asarray(mu_rec_steps, dtype=np.float64)
    mu_e = np.asarray(mu_exp_steps, dtype=np.float64)
    if mu_r.size == 0 or mu_e.size == 0:
        raise DataError("empty weight sequence")
    return float(mu_r.mean()), float(mu_e.mean())
