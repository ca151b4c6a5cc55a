"""Gated dual-view time encoding.

Builds mixed item/explanation base embeddings, encodes adjacent and absolute
log time intervals with two shared GRUs, and fuses the two interval features
with a learned per-sequence gate before adding them (scaled) to the base
embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .tensor import (Tensor, add, gather_rows, mean_rows, mul, reshape, scale,
                     sigmoid, stack_seq, sub, tanh, tsum)

TIME_STRATEGIES = ("gated", "abs_only", "adj_only", "equal", "disabled")


# -- intervals ---------------------------------------------------------------

def intervals(times) -> dict:
    """Adjacent and absolute log intervals for one sorted timestamp list.

    Both vectors start with 0; entry i >= 1 is log(1 + t_i - t_{i-1}) for
    the adjacent view and log(1 + t_i - t_0) for the absolute view.
    """
    t = np.asarray(times, dtype=np.float64)
    if t.size and np.any(np.diff(t) < 0):
        raise DataError("timestamps must be non-decreasing")
    adj = np.zeros_like(t)
    ab = np.zeros_like(t)
    if t.size > 1:
        adj[1:] = np.log1p(t[1:] - t[:-1])
        ab[1:] = np.log1p(t[1:] - t[0])
    return {"adj": adj, "abs": ab}


def batch_intervals(times: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row intervals on the valid prefix; padded positions stay 0."""
    B, L = times.shape
    adj = np.zeros((B, L))
    ab = np.zeros((B, L))
    for b in range(B):
        n = int(lengths[b])
        iv = intervals(times[b, :n])
        adj[b, :n] = iv["adj"]
        ab[b, :n] = iv["abs"]
    return adj, ab


# -- parameters --------------------------------------------------------------

@dataclass
class GruCellParams:
    """Scalar-input GRU cell with hidden width d."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    def tensors(self) -> dict:
        return {k: getattr(self, k) for k in
                ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")}


def init_gru(d: int, rng: np.random.Generator) -> GruCellParams:
    s = 1.0 / np.sqrt(d)
    def w(*shape):
        return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)
    def b():
        return Tensor(np.zeros((1, d)), requires_grad=True)
    return GruCellParams(W_z=w(1, d), U_z=w(d, d), b_z=b(),
                         W_r=w(1, d), U_r=w(d, d), b_r=b(),
                         W_h=w(1, d), U_h=w(d, d), b_h=b())


@dataclass
class GateMlpParams:
    """Two-layer perceptron d -> d -> 1 with tanh hidden activation."""

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def tensors(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def init_gate_mlp(d_in: int, d_hidden: int, rng: np.random.Generator) -> GateMlpParams:
    s1 = 1.0 / np.sqrt(d_in)
    s2 = 1.0 / np.sqrt(d_hidden)
    return GateMlpParams(
        W1=Tensor(rng.uniform(-s1, s1, size=(d_in, d_hidden)), requires_grad=True),
        b1=Tensor(np.zeros((1, d_hidden)), requires_grad=True),
        W2=Tensor(rng.uniform(-s2, s2, size=(d_hidden, 1)), requires_grad=True),
        b2=Tensor(np.zeros((1, 1)), requires_grad=True),
    )


def mlp_scalar(params: GateMlpParams, x: Tensor) -> Tensor:
    """Pre-sigmoid scalar head of the two-layer perceptron; x is (..., d_in)."""
    hidden = tanh(add(x @ params.W1, params.b1))
    return add(hidden @ params.W2, params.b2)


# -- forward pieces ----------------------------------------------------------

def base_embeddings(items: np.ndarray, expls: np.ndarray,
                    M_V: Tensor, M_E: Tensor, alpha: float) -> tuple[Tensor, Tensor]:
    """Mix the two lookup tables into per-branch base embeddings."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    ev = gather_rows(M_V, items)
    ee = gather_rows(M_E, expls)
    e_rec = add(scale(ev, alpha), scale(ee, 1.0 - alpha))
    e_exp = add(scale(ee, alpha), scale(ev, 1.0 - alpha))
    return e_rec, e_exp


def gru_encode(params: GruCellParams, deltas: np.ndarray) -> Tensor:
    """Run the GRU over a (B, L) batch of scalar inputs; result is (B, L, d).

    Convention: h_t = z * h_{t-1} + (1 - z) * h_tilde, zero initial state.
    """
    B, L = deltas.shape
    d = params.U_z.shape[0]
    h = Tensor(np.zeros((B, d)))
    steps = []
    for t in range(L):
        x = Tensor(deltas[:, t:t + 1])
        z = sigmoid(add(add(x @ params.W_z, h @ params.U_z), params.b_z))
        r = sigmoid(add(add(x @ params.W_r, h @ params.U_r), params.b_r))
        cand = tanh(add(add(x @ params.W_h, mul(r, h) @ params.U_h), params.b_h))
        h = add(mul(z, h), mul(sub(Tensor(1.0), z), cand))
        steps.append(h)
    return stack_seq(steps)


def gate(params: GateMlpParams, base: Tensor, mask: np.ndarray,
         lengths: np.ndarray) -> Tensor:
    """Per-sequence gate in (0, 1) from the masked time-mean of `base`.

    `base` is (B, L, d); padded steps are excluded from the mean so the gate
    never sees sentinel rows. Returns shape (B, 1).
    """
    msk = Tensor(mask.astype(np.float64)[:, :, None])
    summed = tsum(mul(base, msk), axis=1)                     # (B, d)
    mean = mul(summed, Tensor(1.0 / lengths.astype(np.float64)[:, None]))
    return sigmoid(mlp_scalar(params, mean))


def fuse(h_adj: Tensor, h_abs: Tensor, gamma) -> Tensor:
    """gamma * H_adj + (1 - gamma) * H_abs; gamma is (B, 1) or a constant."""
    if isinstance(gamma, Tensor):
        g = reshape(gamma, (gamma.shape[0], 1, 1))
        return add(mul(g, h_adj), mul(sub(Tensor(1.0), g), h_abs))
    return add(scale(h_adj, gamma), scale(h_abs, 1.0 - gamma))


def time_aware_embed(items, expls, times, mask, lengths, *,
                     M_V: Tensor, M_E: Tensor,
                     gru_adj: GruCellParams, gru_abs: GruCellParams,
                     gate_rec: GateMlpParams, gate_exp: GateMlpParams,
                     alpha: float, beta: float, strategy: str = "gated") -> dict:
    """Full time-aware embedding pipeline for one padded batch.

    Returns base and time-aware embeddings per branch plus the fused gate
    values (None for hard-set strategies). `disabled` leaves the base
    embeddings untouched.
    """
    if strategy not in TIME_STRATEGIES:
        raise ConfigError(f"unknown time strategy {strategy!r}; "
                          f"valid: {', '.join(TIME_STRATEGIES)}")
    e_rec, e_exp = base_embeddings(items, expls, M_V, M_E, alpha)
    out = {"E_rec": e_rec, "E_exp": e_exp, "gamma_rec": None, "gamma_exp": None}

    if strategy == "disabled" or beta == 0.0:
        out["E_rec_time"] = e_rec
        out["E_exp_time"] = e_exp
        return out

    adj, ab = batch_intervals(times, lengths)
    h_adj = gru_encode(gru_adj, adj)
    h_abs = gru_encode(gru_abs, ab)

    if strategy == "gated":
        g_rec = gate(gate_rec, e_rec, mask, lengths)
        g_exp = gate(gate_exp, e_exp, mask, lengths)
        t_rec = fuse(h_adj, h_abs, g_rec)
        t_exp = fuse(h_adj, h_abs, g_exp)
        out["gamma_rec"], out["gamma_exp"] = g_rec, g_exp
    else:
        fixed = {"adj_only": 1.0, "abs_only": 0.0, "equal": 0.5}[strategy]
        t_rec = t_exp = fuse(h_adj, h_abs, fixed)

    out["E_rec_time"] = add(e_rec, scale(t_rec, beta))
    out["E_exp_time"] = add(e_exp, scale(t_exp, beta))
    return out
