"""Synthetic interaction corpora with planted, recoverable structure.

Plants three kinds of signal so that desk-scale experiments have a known
ground truth: item clusters (interests), per-user temporal rhythm tied to
which cluster the user draws from, and a per-user item/explanation linkage
strength (alignment profile).

Rhythm patterns:
  * ``alternating`` (short mean gap): gaps follow a sticky two-state process
    and the current gap state selects which half of the user's cluster the
    item comes from, so recent gaps carry predictive signal.
  * ``drift`` (long mean gap): the user switches cluster halves once the
    absolute elapsed time crosses the midpoint of their history, so time
    since the first interaction carries the signal.

Alignment profiles set the probability that an interaction's explanation is
the item's canonical one (vs. uniform noise), which controls how learnable
the cross-branch alignment is for that user.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Interaction
from .errors import DataError

SECONDARY_CLUSTER_WEIGHT = 0.2


@dataclass
class RhythmProfile:
    mean_gap_s: float
    burstiness: float = 0.4        # lognormal sigma of gap noise
    pattern: str = "alternating"   # alternating | drift
    pool_noise: float = 0.0        # P(item drawn from the opposite half);
                                   # > 0 leaves the gap sequence as the only
                                   # reliable witness of the hidden state


@dataclass
class SyntheticSpec:
    user_count: int = 500
    item_count: int = 300
    expl_count: int = 200
    interest_cluster_count: int = 3
    rhythm_profiles: list = field(default_factory=lambda: [
        RhythmProfile(mean_gap_s=3600.0, pattern="alternating"),
        RhythmProfile(mean_gap_s=30 * 86400.0, pattern="drift"),
    ])
    alignment_profiles: list = field(default_factory=lambda: [
        ("balanced", 0.95),
        ("rec_dominant", 0.55),
        ("exp_dominant", 0.15),
    ])
    min_len: int = 12
    max_len: int = 30
    secondary_weight: float = SECONDARY_CLUSTER_WEIGHT
    pool_overlap: float = 0.0      # fraction of a cluster's items shared by
                                   # both halves; shared items are ambiguous
                                   # witnesses of the hidden gap state
    seed: int = 0

    def validate(self) -> None:
        if self.item_count < 2 * self.interest_cluster_count:
            raise DataError("need at least two items per interest cluster")
        if self.user_count < self.interest_cluster_count:
            raise DataError("need at least one user per interest cluster")
        if self.min_len < 3:
            raise DataError("sequences must allow a leave-one-out split")
        if not 0.0 <= self.secondary_weight < 1.0:
            raise DataError("secondary_weight must lie in [0, 1)")
        for p in self.rhythm_profiles:
            if not 0.0 <= p.pool_noise <= 0.5:
                raise DataError("pool_noise must lie in [0, 0.5]")
        if not 0.0 <= self.pool_overlap <= 0.9:
            raise DataError("pool_overlap must lie in [0, 0.9]")


@dataclass
class PlantedLabels:
    """Ground truth per user id, for verification only."""

    cluster: dict[str, int]
    rhythm: dict[str, int]
    alignment: dict[str, str]
    cluster_mixture: dict[str, list]   # planted (cluster, weight) pairs


def _cluster_pools(spec: SyntheticSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition items into clusters, each split into two halves."""
    k = spec.interest_cluster_count
    items = np.arange(spec.item_count)
    pools = []
    for c in range(k):
        members = items[items % k == c]
        n = len(members)
        shared = int(round(spec.pool_overlap * n))
        base = (n - shared) // 2
        pools.append((members[:base + shared], members[base:]))
    return pools


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Interaction], PlantedLabels]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pools = _cluster_pools(spec)
    k = spec.interest_cluster_count
    expl_map = rng.permutation(spec.expl_count)  # item -> canonical explanation

    interactions: list[Interaction] = []
    labels = PlantedLabels({}, {}, {}, {})
    for u in range(spec.user_count):
        uid = f"u{u:05d}"
        c1 = u % k
        c2 = (c1 + 1) % k
        rhythm_idx = c1 % len(spec.rhythm_profiles)
        align_idx = c1 % len(spec.alignment_profiles)
        profile = spec.rhythm_profiles[rhythm_idx]
        align_name, p_link = spec.alignment_profiles[align_idx]
        labels.cluster[uid] = c1
        labels.rhythm[uid] = rhythm_idx
        labels.alignment[uid] = align_name
        labels.cluster_mixture[uid] = [(c1, 1.0 - spec.secondary_weight),
                                       (c2, spec.secondary_weight)]

        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        t = float(rng.integers(1_000_000, 2_000_000))
        gap_state = 0  # 0 = short, 1 = long; sticky (flip prob 0.25)
        states, times = [0], [int(t)]
        for i in range(1, n):
            if profile.pattern == "alternating":
                if rng.random() < 0.25:
                    gap_state = 1 - gap_state
                base = profile.mean_gap_s * (0.3 if gap_state == 0 else 2.5)
            else:
                base = profile.mean_gap_s
            t += max(1.0, base * rng.lognormal(0.0, profile.burstiness))
            states.append(gap_state)
            times.append(int(t))

        total_span = times[-1] - times[0] if n > 1 else 1
        for i in range(n):
            cluster = c2 if rng.random() < spec.secondary_weight else c1
            if profile.pattern == "alternating":
                # the gap state that produced step i's arrival also picks its half
                half = states[i]
            else:
                half = 0 if (times[i] - times[0]) < total_span / 2 else 1
            if profile.pool_noise > 0.0 and rng.random() < profile.pool_noise:
                half = 1 - half
            pool = pools[cluster][half]
            item = int(rng.choice(pool))
            if rng.random() < p_link:
                expl = int(expl_map[item % spec.expl_count])
            else:
                expl = int(rng.integers(0, spec.expl_count))
            interactions.append(Interaction(uid, f"v{item:05d}", f"e{expl:05d}", times[i]))
    return interactions, labels
