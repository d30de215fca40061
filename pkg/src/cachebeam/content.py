"""Content catalog, cache placement, scheduling and multicast grouping.

Content ids are 1-based and ordered by popularity rank (id 1 = most
popular for a Zipf catalog). Cache placement is a binary L x F matrix;
column f-1 corresponds to content f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import stream


@dataclass(frozen=True)
class Catalog:
    """Content catalog with a popularity pmf over F contents."""

    F: int
    popularity: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.popularity, dtype=float)
        object.__setattr__(self, "popularity", p)
        if self.F < 1 or p.shape != (self.F,):
            raise ValueError("popularity must have length F >= 1")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("popularity must be a probability vector")


@dataclass(frozen=True)
class CachePlacement:
    """Binary cache matrix C (L x F) with per-BS storage budgets."""

    C: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.int8)
        budgets = np.asarray(self.budgets, dtype=int)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "budgets", budgets)
        if C.ndim != 2:
            raise ValueError("C must be an L x F matrix")
        if not np.isin(C, (0, 1)).all():
            raise ValueError("cache entries must be 0/1")
        if budgets.shape != (C.shape[0],):
            raise ValueError("one budget per BS required")
        if np.any(C.sum(axis=1) > budgets):
            raise ValueError("cache row exceeds its budget")
        if np.any(budgets >= C.shape[1]):
            raise ValueError("budgets must satisfy F_l < F")

    @property
    def num_bs(self) -> int:
        return self.C.shape[0]

    @property
    def num_contents(self) -> int:
        return self.C.shape[1]

    def is_cached(self, bs: int, content: int) -> bool:
        """True if 1-based content id is cached at BS index bs."""
        return bool(self.C[bs, content - 1])


@dataclass(frozen=True)
class Group:
    """One multicast group: a content and the users requesting it."""

    content: int
    members: tuple[int, ...]
    gamma: float
    rate: float


@dataclass(frozen=True)
class GroupSet:
    """Multicast groups partitioning the scheduled users.

    Proper multicast grouping merges all users of a content into one group
    (distinct content ids across groups); `distinct_contents=False` admits
    the degenerate per-user grouping used by the unicast baseline.
    """

    groups: tuple[Group, ...]
    distinct_contents: bool = True

    def __post_init__(self):
        seen_users: set[int] = set()
        seen_contents: set[int] = set()
        for g in self.groups:
            if self.distinct_contents and g.content in seen_contents:
                raise ValueError("groups must have distinct content ids")
            seen_contents.add(g.content)
            overlap = seen_users.intersection(g.members)
            if overlap:
                raise ValueError(f"users {overlap} appear in multiple groups")
            seen_users.update(g.members)
            if g.rate != np.log2(1.0 + g.gamma):
                raise ValueError("group rate must equal log2(1 + gamma)")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def num_users(self) -> int:
        return sum(len(g.members) for g in self.groups)


def zipf_pmf(F: int, skew: float) -> np.ndarray:
    """Zipf popularity p_f proportional to f^(-skew), f = 1..F."""
    if F < 1 or skew < 0:
        raise ValueError("need F >= 1 and skew >= 0")
    weights = np.arange(1, F + 1, dtype=float) ** (-skew)
    return weights / weights.sum()


def zipf_catalog(F: int, skew: float = 1.0) -> Catalog:
    return Catalog(F=F, popularity=zipf_pmf(F, skew))


def _normalize_budgets(catalog: Catalog, budgets, L: int | None) -> np.ndarray:
    b = np.asarray(budgets, dtype=int)
    if b.ndim == 0:
        if L is None:
            raise ValueError("scalar budget requires the number of BSs")
        b = np.full(L, int(b))
    if np.any(b < 0) or np.any(b >= catalog.F):
        raise ValueError("budgets must satisfy 0 <= F_l < F")
    return b


def popularity_aware_cache(
    catalog: Catalog, budgets, L: int | None = None
) -> CachePlacement:
    """Each BS caches its F_l most popular contents (ties: lower id)."""
    b = _normalize_budgets(catalog, budgets, L)
    # Stable sort on -popularity keeps lower ids first among ties.
    order = np.argsort(-catalog.popularity, kind="stable")
    C = np.zeros((len(b), catalog.F), dtype=np.int8)
    for l, budget in enumerate(b):
        C[l, order[:budget]] = 1
    return CachePlacement(C=C, budgets=b)


def random_cache(catalog: Catalog, budgets, seed: int, L: int | None = None) -> CachePlacement:
    """Each BS caches a uniform random F_l-subset, independent across BSs."""
    b = _normalize_budgets(catalog, budgets, L)
    rng = stream(seed, "cache")
    C = np.zeros((len(b), catalog.F), dtype=np.int8)
    for l, budget in enumerate(b):
        chosen = rng.choice(catalog.F, size=budget, replace=False)
        C[l, chosen] = 1
    return CachePlacement(C=C, budgets=b)


def no_cache(catalog: Catalog, L: int) -> CachePlacement:
    """All-zero placement (every request pays backhaul)."""
    return CachePlacement(
        C=np.zeros((L, catalog.F), dtype=np.int8), budgets=np.zeros(L, dtype=int)
    )


def round_robin_schedule(total_users: int, K: int, interval: int) -> np.ndarray:
    """The K user ids scheduled in the given interval (wrapping)."""
    if K > total_users:
        raise ValueError("cannot schedule more users than exist")
    start = (interval * K) % total_users
    return (start + np.arange(K)) % total_users


def draw_requests(
    K: int,
    common_fraction: float,
    catalog: Catalog,
    seed: int,
    *,
    interval: int = 0,
    common_content: int | None = None,
) -> np.ndarray:
    """Per-user content requests for one interval.

    The first ceil(common_fraction * K) users request a shared content,
    drawn once from the popularity pmf (or forced via `common_content`);
    the rest draw i.i.d. from the pmf. Returns 1-based content ids.
    """
    if not 0.0 <= common_fraction <= 1.0:
        raise ValueError("common_fraction must be in [0, 1]")
    rng = stream(seed, "requests", interval)
    n_common = int(np.ceil(common_fraction * K))
    ids = np.arange(1, catalog.F + 1)
    shared = (
        common_content
        if common_content is not None
        else int(rng.choice(ids, p=catalog.popularity))
    )
    requests = np.empty(K, dtype=int)
    requests[:n_common] = shared
    if K > n_common:
        requests[n_common:] = rng.choice(ids, size=K - n_common, p=catalog.popularity)
    return requests


def form_groups(requests, gamma: float) -> GroupSet:
    """Group users by requested content; rate is log2(1 + gamma)."""
    requests = np.asarray(requests, dtype=int)
    if requests.size == 0:
        raise ValueError("requests must be nonempty")
    if gamma <= 0:
        raise ValueError("target SINR must be positive")
    rate = float(np.log2(1.0 + gamma))
    groups = []
    for content in sorted(set(requests.tolist())):
        members = tuple(int(i) for i in np.flatnonzero(requests == content))
        groups.append(Group(content=content, members=members, gamma=float(gamma), rate=rate))
    return GroupSet(groups=tuple(groups))


def singleton_groups(requests, gamma: float) -> GroupSet:
    """One group per user (unicast baseline); contents may repeat."""
    requests = np.asarray(requests, dtype=int)
    if requests.size == 0:
        raise ValueError("requests must be nonempty")
    rate = float(np.log2(1.0 + gamma))
    groups = tuple(
        Group(content=int(f), members=(int(k),), gamma=float(gamma), rate=rate)
        for k, f in enumerate(requests)
    )
    return GroupSet(groups=groups, distinct_contents=False)


def coupling_weights(cache: CachePlacement, gs: GroupSet) -> np.ndarray:
    """Backhaul weights alpha[l, m] = R_m * (1 - c_{l, f_m})."""
    L = cache.num_bs
    alpha = np.zeros((L, gs.num_groups))
    for m, g in enumerate(gs.groups):
        if g.content > cache.num_contents:
            raise ValueError(f"content {g.content} outside catalog")
        alpha[:, m] = g.rate * (1 - cache.C[:, g.content - 1])
    return alpha


def save_cache_placement(path, cache: CachePlacement) -> None:
    """Write placement as a header line `L F` then L rows of 0/1 digits."""
    with open(path, "w") as fh:
        fh.write(f"{cache.num_bs} {cache.num_contents}\n")
        for row in cache.C:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_cache_placement(path) -> CachePlacement:
    with open(path) as fh:
        L, F = (int(tok) for tok in fh.readline().split())
        C = np.loadtxt(fh, dtype=np.int8, ndmin=2)
    if C.shape != (L, F):
        raise ValueError(f"expected {L}x{F} matrix in {path}, got {C.shape}")
    # Budgets are not part of the format; the row sums are the tightest
    # consistent choice (and must respect F_l < F).
    budgets = C.sum(axis=1).astype(int)
    return CachePlacement(C=C, budgets=budgets)
