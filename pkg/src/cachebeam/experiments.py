"""End-to-end scheduling intervals, cost accounting, sweeps and oracles.

One scheduling interval runs: round-robin user selection, request draws,
multicast group formation, DC beamformer optimization, rank-one recovery,
and cost evaluation. Sweeps repeat this over interval indices and average
per (eta, cache size) cell; all randomness derives from the base seed via
the documented stream splits (users once per run; channels and requests
re-keyed per interval; randomization trials re-keyed per interval through
seed XOR (interval << 32) so trial streams never collide across
intervals).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic, netgen, optimizer
from .content import (
    CachePlacement,
    Catalog,
    coupling_weights,
    draw_requests,
    form_groups,
    no_cache,
    popularity_aware_cache,
    random_cache,
    round_robin_schedule,
    singleton_groups,
    zipf_catalog,
)
from .netgen import generate_channels, generate_layout, place_users, noise_power
from .optimizer import DcConfig, selector_matrices

POLICIES = ("popularity", "random", "none")
MODES = ("multicast", "unicast")

CSV_HEADER = (
    "eta,cache_size,policy,mode,mean_power_dbm,mean_power_w,"
    "mean_backhaul,feasibility_rate,intervals,infeasible_count"
)


@dataclass(frozen=True)
class CostReport:
    """Cost of one scheduling interval."""

    transmit_power: float
    backhaul: float
    network_cost: float
    per_group_clusters: tuple[int, ...]
    feasible: bool
    iterations: int
    reason: str = ""


@dataclass(frozen=True)
class SweepSpec:
    """Scenario, sweep axes and optimizer settings for an experiment."""

    L: int = 3
    N_t: int = 2
    K: int = 6
    F: int = 20
    total_users: int = 60
    gamma_db: float = 10.0
    skew: float = 1.0
    common_fraction: float = 0.5
    radius: float = 1.2
    spacing: float = 0.8
    power_budget: float = 10.0
    noise_psd_dbm_hz: float = netgen.DEFAULT_NOISE_PSD_DBM_HZ
    bandwidth_hz: float = netgen.DEFAULT_BANDWIDTH_HZ
    shadowing_std_db: float = netgen.DEFAULT_SHADOWING_STD_DB
    antenna_gain_dbi: float = netgen.DEFAULT_ANTENNA_GAIN_DBI
    bs_positions: tuple | None = None
    eta_values: tuple[float, ...] = (1.0,)
    cache_sizes: tuple[int, ...] = (1,)
    policy: str = "popularity"
    mode: str = "multicast"
    intervals: int = 20
    base_seed: int = 0
    common_content: int | None = None
    dc: DcConfig = field(default_factory=DcConfig)

    def __post_init__(self):
        if self.intervals < 1 or not self.eta_values or not self.cache_sizes:
            raise ValueError("intervals >= 1 and nonempty sweep axes required")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def gamma(self) -> float:
        return 10.0 ** (self.gamma_db / 10.0)

    @property
    def sigma2(self) -> float:
        return noise_power(self.noise_psd_dbm_hz, self.bandwidth_hz)


@dataclass(frozen=True)
class SweepRow:
    eta: float
    cache_size: int
    policy: str
    mode: str
    mean_power_dbm: float
    mean_power_w: float
    mean_backhaul: float
    feasibility_rate: float
    intervals: int
    infeasible_count: int


def desk_scale_spec(**overrides) -> SweepSpec:
    """Small scenario (3 BSs in a triangle) sized for fast validation runs."""
    r = 0.8 / math.sqrt(3.0)  # equilateral triangle with 0.8 km sides
    angles = np.deg2rad([90.0, 210.0, 330.0])
    positions = tuple((r * math.cos(a), r * math.sin(a)) for a in angles)
    base = dict(
        L=3,
        N_t=2,
        K=6,
        F=20,
        total_users=60,
        intervals=20,
        radius=0.6,
        bs_positions=positions,
    )
    base.update(overrides)
    return SweepSpec(**base)


def paper_scale_spec(**overrides) -> SweepSpec:
    """Full-size scenario: 7-BS hexagonal lattice, 140 users, 300 intervals."""
    base = dict(
        L=7,
        N_t=3,
        K=14,
        F=100,
        total_users=140,
        intervals=300,
        cache_sizes=(10,),
    )
    base.update(overrides)
    return SweepSpec(**base)


def build_layout(spec: SweepSpec) -> netgen.NetworkLayout:
    return generate_layout(
        spec.L,
        spec.radius,
        spec.spacing,
        antennas_per_bs=spec.N_t,
        power_budget_per_bs=spec.power_budget,
        antenna_gain_dbi=spec.antenna_gain_dbi,
        positions=np.asarray(spec.bs_positions) if spec.bs_positions is not None else None,
    )


def build_cache(
    spec: SweepSpec, catalog: Catalog, cache_size: int, policy: str | None = None
) -> CachePlacement:
    policy = spec.policy if policy is None else policy
    if policy == "none":
        return no_cache(catalog, spec.L)
    if policy == "popularity":
        return popularity_aware_cache(catalog, cache_size, spec.L)
    return random_cache(catalog, cache_size, spec.base_seed, spec.L)


def network_cost(w, alpha, eta: float, delta: float) -> CostReport:
    """Cost report for a beamformer set (multicast accounting)."""
    alpha = np.asarray(alpha, dtype=float)
    L = alpha.shape[0]
    Nt = len(np.asarray(w[0])) // L
    cost, transmit, backhaul, clusters = optimizer.beamformer_cost(
        w, alpha, eta, delta, L, Nt
    )
    return CostReport(
        transmit_power=transmit,
        backhaul=backhaul,
        network_cost=cost,
        per_group_clusters=tuple(len(q) for q in clusters),
        feasible=True,
        iterations=0,
    )


def unicast_backhaul(clusters, gs, cache: CachePlacement) -> float:
    """Deduplicated backhaul: each (BS, uncached content) pair counts once."""
    pairs = {}
    for m, g in enumerate(gs.groups):
        for l in clusters[m]:
            if not cache.is_cached(l, g.content):
                pairs[(l, g.content)] = g.rate
    return float(sum(pairs.values()))


def _infeasible_report(reason: str) -> CostReport:
    return CostReport(
        transmit_power=np.nan,
        backhaul=np.nan,
        network_cost=np.nan,
        per_group_clusters=(),
        feasible=False,
        iterations=0,
        reason=reason,
    )


def run_interval(
    spec: SweepSpec,
    interval: int,
    *,
    eta: float | None = None,
    cache_size: int | None = None,
    policy: str | None = None,
    cache: CachePlacement | None = None,
    return_details: bool = False,
):
    """Run one scheduling interval end to end; deterministic per (seed, interval)."""
    eta = spec.eta_values[0] if eta is None else eta
    cache_size = spec.cache_sizes[0] if cache_size is None else cache_size

    layout = build_layout(spec)
    users = place_users(layout, spec.total_users, spec.base_seed)
    sched = round_robin_schedule(spec.total_users, spec.K, interval)
    chan = generate_channels(
        layout,
        users[sched],
        spec.base_seed,
        interval=interval,
        shadowing_std_db=spec.shadowing_std_db,
        noise_w=spec.sigma2,
    )
    catalog = zipf_catalog(spec.F, spec.skew)
    if cache is None:
        cache = build_cache(spec, catalog, cache_size, policy)
    requests = draw_requests(
        spec.K,
        spec.common_fraction,
        catalog,
        spec.base_seed,
        interval=interval,
        common_content=spec.common_content,
    )
    if spec.mode == "unicast":
        gs = singleton_groups(requests, spec.gamma)
    else:
        gs = form_groups(requests, spec.gamma)
    alpha = coupling_weights(cache, gs)
    J = selector_matrices(spec.L, spec.N_t)
    P = layout.power_budget_per_bs
    cfg = replace(spec.dc, eta=eta)

    try:
        sol = optimizer.dc_solve(chan.H, gs, J, P, chan.noise_power, alpha, cfg)
        res = optimizer.randomize(
            sol.W,
            chan.H,
            gs,
            J,
            P,
            chan.noise_power,
            alpha,
            eta,
            cfg.n_randomizations,
            seed=spec.base_seed ^ (interval << 32),
            delta=cfg.cluster_threshold,
            rank_tol=cfg.rank_tol,
            solver_tol=cfg.solver_tol,
        )
    except optimizer.QosInfeasibleError:
        report = _infeasible_report("qos_infeasible")
        return (report, None, None) if return_details else report
    except optimizer.RandomizationError:
        report = _infeasible_report("randomization_failure")
        return (report, None, None) if return_details else report

    if spec.mode == "unicast":
        backhaul = unicast_backhaul(res.clusters, gs, cache)
        cost = eta * res.transmit_power + backhaul
    else:
        backhaul = res.backhaul
        cost = res.cost
    report = CostReport(
        transmit_power=res.transmit_power,
        backhaul=backhaul,
        network_cost=cost,
        per_group_clusters=tuple(len(q) for q in res.clusters),
        feasible=True,
        iterations=sol.iterations,
    )
    return (report, sol, res) if return_details else report


def _watts_to_dbm(p: float) -> float:
    return 10.0 * math.log10(p * 1000.0) if p > 0 else -math.inf


def _summarize(spec, eta, cache_size, reports) -> SweepRow:
    ok = [r for r in reports if r.feasible]
    n_bad = len(reports) - len(ok)
    if ok:
        mean_p = float(np.mean([r.transmit_power for r in ok]))
        mean_b = float(np.mean([r.backhaul for r in ok]))
        row = SweepRow(
            eta=eta,
            cache_size=cache_size,
            policy=spec.policy,
            mode=spec.mode,
            mean_power_dbm=_watts_to_dbm(mean_p),
            mean_power_w=mean_p,
            mean_backhaul=mean_b,
            feasibility_rate=len(ok) / len(reports),
            intervals=len(reports),
            infeasible_count=n_bad,
        )
    else:
        row = SweepRow(
            eta=eta,
            cache_size=cache_size,
            policy=spec.policy,
            mode=spec.mode,
            mean_power_dbm=np.nan,
            mean_power_w=np.nan,
            mean_backhaul=np.nan,
            feasibility_rate=0.0,
            intervals=len(reports),
            infeasible_count=n_bad,
        )
    return row


def run_sweep(spec: SweepSpec, threads: int = 1) -> list[SweepRow]:
    """Average run_interval over all (eta, cache_size) cells.

    Averages cover feasible intervals only; infeasible ones are counted.
    Results are reduced in interval order, so they do not depend on the
    execution schedule.
    """
    catalog = zipf_catalog(spec.F, spec.skew)
    rows = []
    for eta in spec.eta_values:
        for cache_size in spec.cache_sizes:
            cache = build_cache(spec, catalog, cache_size)
            task = lambda i: run_interval(
                spec, i, eta=eta, cache_size=cache_size, cache=cache
            )
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    reports = list(pool.map(task, range(spec.intervals)))
            else:
                reports = [task(i) for i in range(spec.intervals)]
            rows.append(_summarize(spec, eta, cache_size, reports))
    return rows


def unicast_baseline(spec: SweepSpec, threads: int = 1) -> list[SweepRow]:
    """run_sweep with per-user groups and deduplicated backhaul accounting."""
    if spec.mode != "unicast":
        spec = replace(spec, mode="unicast")
    return run_sweep(spec, threads)


def format_row(row: SweepRow) -> str:
    def num(x):
        return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))

    return ",".join(
        [
            repr(float(row.eta)),
            str(row.cache_size),
            row.policy,
            row.mode,
            num(row.mean_power_dbm),
            num(row.mean_power_w),
            num(row.mean_backhaul),
            repr(float(row.feasibility_rate)),
            str(row.intervals),
            str(row.infeasible_count),
        ]
    )


def write_sweep_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(format_row(row) + "\n")


@dataclass(frozen=True)
class TinyInstance:
    """Single-group instance small enough for exhaustive support search."""

    H: np.ndarray
    gs: content.GroupSet
    J: tuple
    P: np.ndarray
    sigma2: float
    alpha: np.ndarray
    eta: float
    seed: int


def make_tiny_instance(seed: int) -> TinyInstance:
    """Random single-group instance: L <= 3 single-antenna BSs, K <= 2 users.

    Channels follow the full propagation model; eta is drawn so that the
    power and backhaul terms actually compete.
    """
    meta = seeds.stream(seed, "layout")
    L = int(meta.integers(2, 4))
    K = int(meta.integers(1, 3))
    eta = float(10.0 ** meta.uniform(-0.5, 0.5))
    cached = meta.integers(0, 2, size=L)
    radius = 0.5
    positions = []
    for _ in range(L):
        r = radius * np.sqrt(meta.random())
        phi = 2 * np.pi * meta.random()
        positions.append((r * np.cos(phi), r * np.sin(phi)))
    layout = generate_layout(
        L, radius, 0.0, antennas_per_bs=1, power_budget_per_bs=10.0,
        positions=np.asarray(positions),
    )
    users = place_users(layout, K, seed)
    chan = generate_channels(layout, users, seed)
    gamma = 10.0
    rate = float(np.log2(1.0 + gamma))
    gs = content.GroupSet(
        groups=(
            content.Group(
                content=1, members=tuple(range(K)), gamma=gamma, rate=rate
            ),
        )
    )
    alpha = (rate * (1 - cached)).reshape(L, 1).astype(float)
    return TinyInstance(
        H=chan.H,
        gs=gs,
        J=selector_matrices(L, 1),
        P=layout.power_budget_per_bs,
        sigma2=chan.noise_power,
        alpha=alpha,
        eta=eta,
        seed=seed,
    )


def tiny_pipeline_cost(inst: TinyInstance, dc: DcConfig | None = None):
    """dc_solve + randomize on a tiny instance; returns (cost, result, sol)."""
    cfg = replace(dc or DcConfig(), eta=inst.eta)
    sol = optimizer.dc_solve(
        inst.H, inst.gs, inst.J, inst.P, inst.sigma2, inst.alpha, cfg
    )
    res = optimizer.randomize(
        sol.W,
        inst.H,
        inst.gs,
        inst.J,
        inst.P,
        inst.sigma2,
        inst.alpha,
        inst.eta,
        cfg.n_randomizations,
        seed=inst.seed,
        delta=cfg.cluster_threshold,
        rank_tol=cfg.rank_tol,
        solver_tol=cfg.solver_tol,
    )
    return res.cost, res, sol


@dataclass(frozen=True)
class OracleResult:
    cost: float
    support: tuple[int, ...]
    power: float


class OracleInfeasibleError(RuntimeError):
    """Every BS support is infeasible for the requested QoS."""


def brute_force_oracle(
    H, gs, J, P, sigma2, alpha, eta: float, tol: float = 1e-7
) -> OracleResult:
    """Exhaustive single-group optimum over all BS supports.

    For each support S the QoS power minimization is solved with the
    complementary blocks forced to zero (Tr(W J_l) <= 0 plus PSD), and the
    candidate cost is eta * power + sum of alpha over S. The minimum over
    supports lower-bounds every feasible rank-one solution.
    """
    if gs.num_groups != 1:
        raise ValueError("the brute-force oracle handles exactly one group")
    alpha = np.asarray(alpha, dtype=float)
    L = len(J)
    best = None
    for mask in range(1, 2**L):
        support = tuple(l for l in range(L) if mask >> l & 1)
        power = _restricted_power_min(H, gs, J, P, sigma2, support, tol)
        if power is None:
            continue
        cost = eta * power + sum(alpha[l, 0] for l in support)
        if best is None or cost < best.cost:
            best = OracleResult(cost=cost, support=support, power=power)
    if best is None:
        raise OracleInfeasibleError("no BS support can meet the QoS target")
    return best


def _restricted_power_min(H, gs, J, P, sigma2, support, tol):
    """QoS power minimization with blocks outside the support forced to zero."""
    n = np.asarray(H).shape[1]
    problem = conic.assemble_qos_sdp(
        H, None, gs, J, P, sigma2, objective_blocks=(np.eye(n),)
    )
    extra = [
        conic.SdpConstraint(mats=(J[l],), sense="<=", rhs=0.0)
        for l in range(len(J))
        if l not in support
    ]
    restricted = conic.LinearSdp(
        block_dims=problem.block_dims,
        objective=problem.objective,
        constraints=problem.constraints + tuple(extra),
    )
    sol = conic.solve(restricted, tol)
    if sol.status == "infeasible":
        return None
    if sol.status != "optimal":
        raise conic.SolverFailure("oracle subproblem failed numerically")
    return sol.objective_value
