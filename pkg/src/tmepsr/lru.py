"""Multihead linear recurrent encoder.

Each head runs an independent diagonal complex linear recurrence over a
``d/H``-wide slice of the input, followed by a real output projection:

    s_i = lam * s_{i-1} + g * x_i,        h_i = Re(s_i) @ U

with ``lam = exp(-exp(nu) + i*theta)`` (so ``|lam| < 1`` for any finite nu)
and ``g = sqrt(1 - |lam|^2)`` when input normalization is enabled. Three
equivalent forward paths are provided: a sequential loop (the reference),
a logarithmic-depth doubling scan, and a constant-cost incremental step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, concat_last, matmul, split_last


def eigenvalues(nu: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Stable complex diagonal transition, |lam| < 1 for all finite nu."""
    return np.exp(-np.exp(nu) + 1j * theta)


def input_gain(nu: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return np.ones_like(nu)
    lam = eigenvalues(nu, np.zeros_like(nu))
    return np.sqrt(1.0 - np.abs(lam) ** 2)


@dataclass
class HeadParams:
    """Parameters of one recurrence head (numpy view, see init_heads)."""

    nu: np.ndarray        # (m,) log-magnitude parameter
    theta: np.ndarray     # (m,) phase
    U: np.ndarray         # (m, m) real output projection
    normalize: bool = True

    @property
    def lam(self) -> np.ndarray:
        return eigenvalues(self.nu, self.theta)

    @property
    def gain(self) -> np.ndarray:
        return input_gain(self.nu, self.normalize)


def init_head(m: int, rng: np.random.Generator, normalize: bool = True) -> HeadParams:
    # magnitude ring in [0.7, 0.99], small positive phases
    r = rng.uniform(0.7, 0.99, size=m)
    nu = np.log(-np.log(r))
    theta = rng.uniform(0.0, np.pi / 8.0, size=m)
    u = rng.uniform(-1.0, 1.0, size=(m, m)) / np.sqrt(m)
    return HeadParams(nu=nu, theta=theta, U=u, normalize=normalize)


# -- forward paths (numpy, no gradients) -------------------------------------

def head_forward_sequential(params: HeadParams, x: np.ndarray) -> np.ndarray:
    """Reference loop over time; x is (n, m), result (n, m)."""
    lam, g = params.lam, params.gain
    n, m = x.shape
    s = np.zeros(m, dtype=np.complex128)
    out = np.empty((n, m))
    for i in range(n):
        s = s * lam + g * x[i]
        out[i] = s.real
    return out @ params.U


def head_forward_scan(params: HeadParams, x: np.ndarray) -> np.ndarray:
    """Doubling (Hillis-Steele) scan over the associative operator
    (a1, b1) o (a2, b2) = (a1*a2, b1*a2 + b2); log2(n) vectorized passes."""
    lam, g = params.lam, params.gain
    n, m = x.shape
    a = np.broadcast_to(lam, (n, m)).copy()
    b = (g * x).astype(np.complex128)
    off = 1
    while off < n:
        b[off:] = b[off:] + b[:-off] * a[off:]
        a[off:] = a[off:] * a[:-off]
        off *= 2
    return b.real @ params.U


@dataclass
class HeadState:
    """Incremental recurrence state for one head."""

    params: HeadParams
    s: np.ndarray = field(init=False)
    step_count: int = field(init=False, default=0)

    def __post_init__(self):
        self.s = np.zeros(self.params.nu.shape[0], dtype=np.complex128)

    def step(self, x_i: np.ndarray) -> np.ndarray:
        """Advance by one input row at cost O(m^2), independent of history."""
        self.s = self.s * self.params.lam + self.params.gain * x_i
        self.step_count += 1
        return self.s.real @ self.params.U


@dataclass
class EncoderState:
    """Incremental state for every head of one branch, advanced in one shot.

    Concatenates the diagonal recurrences of all heads into a single d-wide
    elementwise update and stacks the output projections into one (H, m, m)
    einsum, so the number of array operations per step is constant in H and
    the arithmetic cost is O(d^2 / H)."""

    heads: list

    def __post_init__(self):
        self.lam = np.concatenate([p.lam for p in self.heads])
        self.gain = np.concatenate([p.gain for p in self.heads])
        self.U = np.stack([p.U for p in self.heads])
        self.s = np.zeros(self.lam.shape[0], dtype=np.complex128)
        self.step_count = 0

    def step(self, x_i: np.ndarray) -> np.ndarray:
        """Advance all heads by one input row; x_i is (d,), result (d,)."""
        self.s = self.s * self.lam + self.gain * x_i
        self.step_count += 1
        h, m, _ = self.U.shape
        return np.einsum("hm,hmn->hn", self.s.real.reshape(h, m), self.U).ravel()


def head_forward_oracle(params: HeadParams, x: np.ndarray) -> np.ndarray:
    """Brute-force power-sum evaluation h_i = sum_k (g x_k) lam^{i-k} U.

    Quadratic in n; kept as an independent check of the recurrence algebra.
    """
    lam, g = params.lam, params.gain
    n, m = x.shape
    out = np.zeros((n, m))
    for i in range(n):
        s = np.zeros(m, dtype=np.complex128)
        for k in range(i + 1):
            s += (g * x[k]) * lam ** (i - k)
        out[i] = s.real
    return out @ params.U


# -- differentiable path ------------------------------------------------------

def lru_recurrence(nu: Tensor, theta: Tensor, x: Tensor,
                   normalize: bool = True, scan: bool = False) -> Tensor:
    """Differentiable recurrence over a batch: x is (B, L, m) -> Re(s) (B, L, m).

    The adjoint runs the recurrence in reverse with conjugated eigenvalues;
    gradients flow to nu, theta, and x.
    """
    lam = eigenvalues(nu.data, theta.data)
    r = np.abs(lam)
    g = np.sqrt(1.0 - r ** 2) if normalize else np.ones_like(r)
    xb = x.data
    B, L, m = xb.shape

    if scan:
        a = np.broadcast_to(lam, (B, L, m)).copy()
        b = (g * xb).astype(np.complex128)
        off = 1
        while off < L:
            b[:, off:] = b[:, off:] + b[:, :-off] * a[:, off:]
            a[:, off:] = a[:, off:] * a[:, :-off]
            off *= 2
        s = b
    else:
        s = np.empty((B, L, m), dtype=np.complex128)
        cur = np.zeros((B, m), dtype=np.complex128)
        for t in range(L):
            cur = cur * lam + g * xb[:, t]
            s[:, t] = cur

    def backward_full(gout):
        # adjoint recurrence: A_t = gout_t + conj(lam) * A_{t+1}
        adj = np.zeros((B, m), dtype=np.complex128)
        clam = np.conj(lam)
        gx = np.empty_like(xb)
        d_lam = np.zeros(m, dtype=np.complex128)
        d_g_vec = np.zeros(m)
        for t in range(L - 1, -1, -1):
            adj = adj * clam + gout[:, t]
            prev = s[:, t - 1] if t > 0 else np.zeros((B, m), dtype=np.complex128)
            d_lam += np.sum(adj * np.conj(prev), axis=0)
            gx[:, t] = g * adj.real
            d_g_vec += np.sum(adj.real * xb[:, t], axis=0)
        # with A = Are + i Aim and p = s_{t-1}: sum A*conj(p) has real part
        # Are*pre + Aim*pim and imag part Aim*pre - Are*pim, matching the
        # real-form adjoints of the two-variable recurrence.
        d_lre, d_lim = d_lam.real, d_lam.imag
        if x.requires_grad:
            x._accumulate(gx)
        dr_dnu = r * (-np.exp(nu.data))
        d_nu = d_lre * dr_dnu * np.cos(theta.data) + d_lim * dr_dnu * np.sin(theta.data)
        d_theta = d_lre * (-lam.imag) + d_lim * lam.real
        if normalize:
            d_nu = d_nu + d_g_vec * (-r / g) * dr_dnu
        if nu.requires_grad:
            nu._accumulate(d_nu)
        if theta.requires_grad:
            theta._accumulate(d_theta)

    return Tensor._from_op(s.real.copy(), (nu, theta, x), backward_full, "lru_recurrence")


# -- module-level encode ------------------------------------------------------

def encode_branch(heads: list[dict], x: Tensor, mode: str = "sequential") -> Tensor:
    """Run all heads of one branch over (B, L, d) input and concat outputs.

    `heads` holds dicts with Tensor entries ``nu``, ``theta``, ``U`` and a
    bool ``normalize``; slices are taken in head order.
    """
    if mode not in ("sequential", "scan"):
        raise DimensionError(f"unknown recurrence mode {mode!r}")
    h = len(heads)
    slices = split_last(x, h)
    outs = []
    for head, xs in zip(heads, slices):
        state = lru_recurrence(head["nu"], head["theta"], xs,
                               normalize=head["normalize"], scan=(mode == "scan"))
        outs.append(matmul(state, head["U"]))
    return concat_last(outs)


def param_count(d: int, h: int, branches: int = 2) -> dict:
    """Exact encoder parameter count and its dominant d^2/H term.

    Per head: a dense (d/H)^2 projection plus 2*(d/H) recurrence parameters.
    """
    if d % h != 0:
        raise DimensionError(f"head count {h} must divide width {d}")
    m = d // h
    per_branch = h * (m * m + 2 * m)
    return {
        "per_branch": per_branch,
        "total": branches * per_branch,
        "dominant_term": d * d // h,
    }
