"""Sparse multicast beamforming core: SDR, smooth l0 penalties, DC loop.

The joint beamformer/clustering problem minimizes

    eta * sum_m ||w_m||^2  +  sum_{l,m} alpha_{l,m} * ||  ||w_{l,m}||^2 ||_0

under per-user SINR targets and per-BS power budgets. After lifting to
W_m = w_m w_m^H the l0 terms are approximated by concave smooth functions
of the per-BS block powers x = Tr(W_m J_l) and minimized by iterating
linear SDPs: each step linearizes the concave penalty at the previous
iterate (majorize-minimize), so the surrogate objective descends
monotonically. Three penalty shapes are supported:

    log:   ln((x + theta) / theta)
    exp:   1 - exp(-x / theta)
    atan:  (2/pi) * arctan(x / theta)

With the gradient-maximizing theta rule the three produce proportional
weights (1/x up to constants e and pi); enabling `normalize_gradients`
rescales exp/atan by those constants so all three drive numerically
identical subproblems. The objective trace reports the effective concave
surrogate that the implemented weights are tangents of, which for the log
kind is exactly the smoothed objective itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import conic
from .seeds import stream

SMOOTH_KINDS = ("log", "exp", "atan")

# Constants making the gradient-max weights of exp/atan coincide with 1/x.
GRADIENT_NORMALIZATION = {"log": 1.0, "exp": np.e, "atan": np.pi}

# Published feasibility slack: SINR >= gamma*(1-TOL), power <= P*(1+TOL).
FEASIBILITY_TOL = 1e-6
# The recovery LP reserves half of the power slack so its certified
# solutions stay inside the published budget tolerance.
_LP_POWER_HEADROOM = 5e-7


class QosInfeasibleError(RuntimeError):
    """The QoS targets cannot be met within the power budgets."""


class RandomizationError(RuntimeError):
    """No feasible rank-one candidate found among the randomization trials."""


@dataclass(frozen=True)
class DcConfig:
    """All optimizer scalars.

    theta_rule is "gradient_max" (theta maximizing the penalty gradient at
    the current iterate) or "fixed" (requires `theta`).
    """

    eta: float = 1.0
    smooth_kind: str = "log"
    epsilon: float = 1e-7
    rho: float = 1e-6
    max_iters: int = 50
    theta_rule: str = "gradient_max"
    theta: float | None = None
    rank_tol: float = 1e-6
    cluster_threshold: float = 1e-6
    n_randomizations: int = 100
    normalize_gradients: bool = True
    solver_tol: float = 1e-7

    def __post_init__(self):
        if self.smooth_kind not in SMOOTH_KINDS:
            raise ValueError(f"smooth_kind must be one of {SMOOTH_KINDS}")
        if self.theta_rule not in ("gradient_max", "fixed"):
            raise ValueError("theta_rule must be 'gradient_max' or 'fixed'")
        if self.theta_rule == "fixed" and (self.theta is None or self.theta <= 0):
            raise ValueError("fixed theta rule requires a positive theta")
        if self.eta < 0 or self.epsilon <= 0 or self.rho <= 0:
            raise ValueError("eta >= 0, epsilon > 0 and rho > 0 required")
        if self.cluster_threshold <= 0 or self.max_iters < 1:
            raise ValueError("cluster_threshold > 0 and max_iters >= 1 required")


@dataclass(frozen=True)
class IterationStat:
    index: int
    objective: float
    group_powers: tuple[float, ...]
    cluster_sizes: tuple[int, ...]


@dataclass(frozen=True)
class BeamformerSolution:
    """DC iterate at the SDR (matrix) level plus extraction results."""

    W: tuple
    objective_trace: np.ndarray
    sdr_bound: float
    is_rank_one: tuple[bool, ...]
    clusters: tuple[tuple[int, ...], ...]
    power_min_value: float
    converged: bool
    iteration_stats: tuple[IterationStat, ...]
    w: tuple | None = None

    @property
    def iterations(self) -> int:
        return len(self.objective_trace) - 1


@dataclass(frozen=True)
class RandomizationResult:
    w: tuple
    cost: float
    transmit_power: float
    backhaul: float
    clusters: tuple[tuple[int, ...], ...]
    used_sampling: bool
    feasible_trials: int
    fallback_groups: tuple[int, ...]
    # Certified relaxation bound at the returned support; cost can never
    # fall below it (up to solver tolerance).
    sdr_bound: float = -np.inf


def selector_matrices(L: int, Nt: int) -> tuple[np.ndarray, ...]:
    """Diagonal 0/1 matrices picking out each BS's antenna block."""
    n = L * Nt
    out = []
    for l in range(L):
        d = np.zeros(n)
        d[l * Nt : (l + 1) * Nt] = 1.0
        out.append(np.diag(d))
    return tuple(out)


def smooth_value(kind: str, x: float, theta: float):
    """Concave l0 surrogate f(x); f(0) = 0, f increasing, f' decreasing."""
    x = np.asarray(x, dtype=float)
    if theta <= 0:
        raise ValueError("theta must be positive")
    if kind == "log":
        return np.log((x + theta) / theta)
    if kind == "exp":
        return 1.0 - np.exp(-x / theta)
    if kind == "atan":
        return (2.0 / np.pi) * np.arctan(x / theta)
    raise ValueError(f"unknown smooth kind {kind!r}")


def theta_star(kind: str, x: float, eps: float) -> float:
    """Smoothness factor maximizing the penalty gradient at block power x.

    The log gradient 1/(x+theta) is maximized as theta -> 0, so it is set
    to the floor eps; for exp and atan the maximizer is theta = x, floored
    at eps to stay defined at x = 0.
    """
    if kind == "log":
        return eps
    if kind in ("exp", "atan"):
        return max(float(x), eps)
    raise ValueError(f"unknown smooth kind {kind!r}")


def gradient_coef(kind: str, x: float, theta: float) -> float:
    """Scalar derivative f'(x; theta); the gradient matrix is f' * J_l."""
    x = float(x)
    if kind == "log":
        return 1.0 / (x + theta)
    if kind == "exp":
        return np.exp(-x / theta) / theta
    if kind == "atan":
        return (2.0 / np.pi) * theta / (x * x + theta * theta)
    raise ValueError(f"unknown smooth kind {kind!r}")


def gradient_matrix(kind: str, W_m: np.ndarray, J_l: np.ndarray, theta: float) -> np.ndarray:
    """Gradient of f(Tr(W_m J_l)) with respect to W_m."""
    x = float(np.real(np.trace(W_m @ J_l)))
    return gradient_coef(kind, x, theta) * J_l


def _subproblem_weight(kind: str, x: float, cfg: DcConfig) -> float:
    """Penalty weight on Tr(W_m J_l) used in one DC subproblem."""
    x = max(float(x), 0.0)
    if cfg.theta_rule == "fixed":
        theta = cfg.theta
    else:
        theta = theta_star(kind, x, cfg.epsilon)
    g = gradient_coef(kind, x, theta)
    if cfg.normalize_gradients:
        g *= GRADIENT_NORMALIZATION[kind]
    return g


def surrogate_value(kind: str, x: float, cfg: DcConfig):
    """Effective concave penalty whose tangent slopes are the DC weights.

    For the fixed theta rule this is the smooth function itself. Under the
    gradient-max rule it is the antiderivative of the floored weight
    (exactly the smooth function for the log kind); reporting it makes the
    majorize-minimize descent of the objective trace hold by construction.
    """
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    scale = GRADIENT_NORMALIZATION[kind] if cfg.normalize_gradients else 1.0
    if cfg.theta_rule == "fixed":
        return scale * smooth_value(kind, x, cfg.theta)
    eps = cfg.epsilon
    if kind == "log":
        return scale * np.log((x + eps) / eps)
    if kind == "exp":
        inner = np.e * (1.0 - np.exp(-np.minimum(x, eps) / eps))
        outer = (np.e - 1.0) + np.log(np.maximum(x, eps) / eps)
        return (scale / np.e) * np.where(x <= eps, inner, outer)
    if kind == "atan":
        inner = 2.0 * np.arctan(np.minimum(x, eps) / eps)
        outer = np.pi / 2.0 + np.log(np.maximum(x, eps) / eps)
        return (scale / np.pi) * np.where(x <= eps, inner, outer)
    raise ValueError(f"unknown smooth kind {kind!r}")


def block_powers_from_matrices(W, L: int, Nt: int) -> np.ndarray:
    """Per-(BS, group) powers Tr(W_m J_l) as an (L, M) array."""
    out = np.empty((L, len(W)))
    for m, Wm in enumerate(W):
        out[:, m] = np.real(np.diagonal(Wm)).reshape(L, Nt).sum(axis=1)
    return out


def block_powers_from_vectors(w, L: int, Nt: int) -> np.ndarray:
    """Per-(BS, group) powers ||w_{l,m}||^2 as an (L, M) array."""
    out = np.empty((L, len(w)))
    for m, wm in enumerate(w):
        out[:, m] = (np.abs(np.asarray(wm).reshape(L, Nt)) ** 2).sum(axis=1)
    return out


def extract_clusters(x, delta: float, *, L: int | None = None, Nt: int | None = None):
    """Serving-BS sets: l is in Q_m iff its block power strictly exceeds delta.

    `x` may be a list of SDR matrices, a list of aggregate beamformers
    (requires L and Nt), or a precomputed (L, M) block-power array.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    powers = _as_block_powers(x, L, Nt)
    return tuple(
        tuple(int(l) for l in np.flatnonzero(powers[:, m] > delta))
        for m in range(powers.shape[1])
    )


def _as_block_powers(x, L, Nt) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.ndim == 2 and not np.iscomplexobj(x):
        return x
    first = np.asarray(x[0])
    if first.ndim == 2:
        n = first.shape[0]
        if L is None or Nt is None:
            raise ValueError("L and Nt are required to read matrix block powers")
        assert L * Nt == n
        return block_powers_from_matrices(x, L, Nt)
    if L is None or Nt is None:
        raise ValueError("L and Nt are required to read vector block powers")
    return block_powers_from_vectors(x, L, Nt)


def _objective_blocks(alpha, weights, eta, J, n, M):
    """Diagonal objective matrices eta*I + sum_l alpha*weight*J_l."""
    blocks = []
    for m in range(M):
        diag = np.full(n, eta, dtype=float)
        for l, Jl in enumerate(J):
            if alpha[l, m] != 0.0:
                diag += alpha[l, m] * weights[l, m] * np.diagonal(Jl)
        blocks.append(np.diag(diag))
    return blocks


def solve_p_ini(H, gamma, gs, J, P, sigma2, tol: float = conic.DEFAULT_TOL):
    """QoS-constrained total power minimization; the DC starting point."""
    n = np.asarray(H).shape[1]
    M = gs.num_groups
    problem = conic.assemble_qos_sdp(
        H, gamma, gs, J, P, sigma2, objective_blocks=(np.eye(n),) * M
    )
    sol = conic.solve(problem, tol)
    if sol.status == "infeasible":
        raise QosInfeasibleError("power minimization is infeasible for these targets")
    if sol.status != "optimal":
        raise conic.SolverFailure("power minimization did not reach optimality")
    return sol.blocks, sol.objective_value


def dc_solve(H, gs, J, P, sigma2, alpha, cfg: DcConfig) -> BeamformerSolution:
    """Run the DC iteration from the power-minimization start point.

    Each iteration solves the linear SDP with objective
    eta * sum_m Tr(W_m) + sum_{l,m} alpha_{l,m} <D_{l,m}, W_m>, where D is
    the (optionally normalized) penalty gradient at the previous iterate.
    Stops when the surrogate objective decreases by less than rho, or at
    max_iters. `sdr_bound` is the optimal value of the subproblem
    linearized at the returned iterate: a certified SDP lower bound used to
    sanity-check extracted solutions.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("coupling weights must be nonnegative")
    L = len(J)
    n = np.asarray(H).shape[1]
    Nt = n // L
    M = gs.num_groups
    kind = cfg.smooth_kind

    W, v_ini = solve_p_ini(H, None, gs, J, P, sigma2, cfg.solver_tol)

    def surrogate_objective(W):
        x = block_powers_from_matrices(W, L, Nt)
        total = cfg.eta * sum(float(np.real(np.trace(Wm))) for Wm in W)
        mask = alpha > 0
        if np.any(mask):
            total += float(np.sum(alpha[mask] * surrogate_value(kind, x[mask], cfg)))
        return total

    def weights_at(W):
        x = np.maximum(block_powers_from_matrices(W, L, Nt), 0.0)
        wt = np.zeros((L, M))
        for l in range(L):
            for m in range(M):
                if alpha[l, m] != 0.0:
                    wt[l, m] = _subproblem_weight(kind, x[l, m], cfg)
        return wt

    def stats_for(t, W, value):
        powers = tuple(float(np.real(np.trace(Wm))) for Wm in W)
        sizes = tuple(
            len(q) for q in extract_clusters(W, cfg.cluster_threshold, L=L, Nt=Nt)
        )
        return IterationStat(index=t, objective=value, group_powers=powers, cluster_sizes=sizes)

    trace = [surrogate_objective(W)]
    stats = [stats_for(0, W, trace[0])]
    converged = False
    for t in range(1, cfg.max_iters + 1):
        blocks = _objective_blocks(alpha, weights_at(W), cfg.eta, J, n, M)
        qos_problem = conic.assemble_qos_sdp(
            H, None, gs, J, P, sigma2, objective_blocks=blocks
        )
        sol = conic.solve(qos_problem, cfg.solver_tol)
        if sol.status != "optimal":
            raise conic.SolverFailure(
                f"DC subproblem at iteration {t} returned {sol.status}"
            )
        W = sol.blocks
        trace.append(surrogate_objective(W))
        stats.append(stats_for(t, W, trace[-1]))
        if trace[-2] - trace[-1] < cfg.rho:
            converged = True
            break

    # Certified lower bound: one more subproblem, linearized at the final W.
    final_blocks = _objective_blocks(alpha, weights_at(W), cfg.eta, J, n, M)
    bound_problem = conic.assemble_qos_sdp(
        H, None, gs, J, P, sigma2, objective_blocks=final_blocks
    )
    bound_sol = conic.solve(bound_problem, cfg.solver_tol)
    sdr_bound = bound_sol.objective_value if bound_sol.status == "optimal" else -np.inf

    return BeamformerSolution(
        W=W,
        objective_trace=np.asarray(trace),
        sdr_bound=float(sdr_bound),
        is_rank_one=tuple(rank_one_check(Wm, cfg.rank_tol) for Wm in W),
        clusters=extract_clusters(W, cfg.cluster_threshold, L=L, Nt=Nt),
        power_min_value=float(v_ini),
        converged=converged,
        iteration_stats=tuple(stats),
    )


def rank_one_check(W_m: np.ndarray, rank_tol: float) -> bool:
    """True iff the second eigenvalue is at most rank_tol of the first."""
    lam = np.linalg.eigvalsh(W_m)
    lam1 = lam[-1]
    if lam1 <= 0.0:
        return True
    lam2 = max(lam[-2], 0.0) if lam.size > 1 else 0.0
    return lam2 / lam1 <= rank_tol


def extract_rank_one(W_m: np.ndarray, rank_tol: float = 1e-6) -> np.ndarray:
    """Principal component sqrt(lambda_1) v_1 of a (near) rank-one matrix.

    The global phase is fixed by making the first nonzero entry real and
    nonnegative. Raises if the matrix is not rank-one within rank_tol.
    """
    if not rank_one_check(W_m, rank_tol):
        raise ValueError("matrix is not rank-one within the given tolerance")
    lam, V = np.linalg.eigh(W_m)
    lam1 = lam[-1]
    if lam1 <= 0.0:
        return np.zeros(W_m.shape[0], dtype=complex)
    w = np.sqrt(lam1) * V[:, -1]
    norm = np.linalg.norm(w)
    nz = np.flatnonzero(np.abs(w) > 1e-12 * norm)
    if nz.size:
        w = w * np.exp(-1j * np.angle(w[nz[0]]))
        w[nz[0]] = abs(w[nz[0]])
    return w


def qos_margins(w, H, gs, sigma2, L: int, Nt: int):
    """Per-user SINR and per-BS power of a beamformer set.

    Returns (sinr, power) where sinr is indexed like the scheduled users
    and power has one entry per BS.
    """
    H = np.asarray(H)
    K = H.shape[0]
    sig = np.zeros(K)
    tot = np.zeros(K)
    for m, g in enumerate(gs.groups):
        wm = np.asarray(w[m])
        quad = np.real(np.einsum("i,kij,j->k", wm.conj(), H, wm))
        tot += quad
        for k in g.members:
            sig[k] = quad[k]
    sinr = sig / (tot - sig + sigma2)
    power = block_powers_from_vectors(w, L, Nt).sum(axis=1)
    return sinr, power


def check_feasible(w, H, gs, sigma2, P, L, Nt, tol: float = FEASIBILITY_TOL) -> bool:
    sinr, power = qos_margins(w, H, gs, sigma2, L, Nt)
    gammas = np.empty(len(sinr))
    for m, g in enumerate(gs.groups):
        for k in g.members:
            gammas[k] = g.gamma
    P = np.broadcast_to(np.asarray(P, dtype=float), (L,))
    return bool(np.all(sinr >= gammas * (1 - tol)) and np.all(power <= P * (1 + tol)))


def apply_cluster_threshold(w, delta, H, gs, sigma2, P, L, Nt):
    """Zero out sub-threshold BS blocks, keeping the solution feasible.

    Blocks with power <= delta are zeroed group by group; if the zeroed
    set violates any user's SINR, the offending groups are restored to
    their unzeroed vectors (restoration only adds interference, so the
    loop monotonically settles). Returns (w, clusters, fallback_groups).
    """
    M = len(w)
    powers = block_powers_from_vectors(w, L, Nt)
    zeroed = []
    for m in range(M):
        wm = np.array(w[m], dtype=complex)
        off = powers[:, m] <= delta
        wm.reshape(L, Nt)[off] = 0.0
        zeroed.append(wm)

    restored: set[int] = set()
    for _ in range(M + 1):
        sinr, _ = qos_margins(zeroed, H, gs, sigma2, L, Nt)
        bad = set()
        for m, g in enumerate(gs.groups):
            if m in restored:
                continue
            if any(sinr[k] < g.gamma * (1 - FEASIBILITY_TOL) for k in g.members):
                bad.add(m)
        if not bad:
            break
        for m in bad:
            zeroed[m] = np.array(w[m], dtype=complex)
        restored |= bad

    clusters = extract_clusters(zeroed, delta, L=L, Nt=Nt)
    return tuple(zeroed), clusters, tuple(sorted(restored))


def beamformer_cost(w, alpha, eta, delta, L, Nt):
    """Network cost eta * power + thresholded backhaul of a beamformer set."""
    alpha = np.asarray(alpha, dtype=float)
    powers = block_powers_from_vectors(w, L, Nt)
    transmit = float(powers.sum())
    clusters = extract_clusters(powers, delta)
    backhaul = float(
        sum(alpha[l, m] for m, q in enumerate(clusters) for l in q)
    )
    return eta * transmit + backhaul, transmit, backhaul, clusters


def support_restricted_bound(
    H, gs, J, P, sigma2, alpha, eta, clusters, delta, tol: float = conic.DEFAULT_TOL
) -> float:
    """Certified lower bound on the network cost over a fixed support.

    Any beamformer set whose clusters match `clusters` (block powers above
    delta exactly inside them), whose SINRs reach gamma*(1-tol_feas) and
    whose per-BS powers stay within P*(1+tol_feas) is feasible for this
    relaxation, so its cost eta*power + backhaul is at least the returned
    value minus solver tolerance.
    """
    n = np.asarray(H).shape[1]
    M = gs.num_groups
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.array([g.gamma for g in gs.groups]) * (1.0 - FEASIBILITY_TOL)
    P = np.broadcast_to(np.asarray(P, dtype=float), (len(J),)) * (1.0 + FEASIBILITY_TOL)
    problem = conic.assemble_qos_sdp(
        H, gamma, gs, J, P, sigma2, objective_blocks=(np.eye(n),) * M
    )
    extra = []
    for m in range(M):
        inside = set(clusters[m])
        for l in range(len(J)):
            if l not in inside:
                mats = tuple(J[l] if i == m else None for i in range(M))
                extra.append(conic.SdpConstraint(mats=mats, sense="<=", rhs=delta))
    restricted = conic.LinearSdp(
        block_dims=problem.block_dims,
        objective=problem.objective,
        constraints=problem.constraints + tuple(extra),
    )
    sol = conic.solve(restricted, tol)
    if sol.status != "optimal":
        return -np.inf
    backhaul = float(sum(alpha[l, m] for m, q in enumerate(clusters) for l in q))
    return eta * sol.objective_value + backhaul


def _power_control_lp(dirs, H, gs, J, P, sigma2, tol):
    """Scale fixed directions to meet the SINR targets: an LP in beta >= 0.

    Returns the per-group power scalings, or None when infeasible.
    """
    M = len(dirs)
    L = len(J)
    gains = np.empty((len(H), M))
    for m, um in enumerate(dirs):
        gains[:, m] = np.real(np.einsum("i,kij,j->k", um.conj(), np.asarray(H), um))
    constraints = []
    for m, g in enumerate(gs.groups):
        for k in g.members:
            mats = tuple(
                np.array([[gains[k, i] / sigma2]])
                if i == m
                else np.array([[-g.gamma * gains[k, i] / sigma2]])
                for i in range(M)
            )
            constraints.append(conic.SdpConstraint(mats=mats, sense=">=", rhs=g.gamma))
    P = np.broadcast_to(np.asarray(P, dtype=float), (L,))
    dir_block = [np.abs(np.asarray(um).reshape(L, -1)) ** 2 for um in dirs]
    for l in range(L):
        mats = tuple(np.array([[dir_block[m][l].sum()]]) for m in range(M))
        constraints.append(
            conic.SdpConstraint(mats=mats, sense="<=", rhs=P[l] * (1 + _LP_POWER_HEADROOM))
        )
    lp = conic.LinearSdp(
        block_dims=(1,) * M,
        objective=(np.eye(1),) * M,
        constraints=tuple(constraints),
    )
    sol = conic.solve(lp, tol)
    if sol.status == "infeasible":
        return None
    if sol.status != "optimal":
        raise conic.SolverFailure("power-control recovery LP failed numerically")
    return np.array([max(float(np.real(b[0, 0])), 0.0) for b in sol.blocks])


def _sample_direction(W_m, rng) -> np.ndarray:
    lam, V = np.linalg.eigh(W_m)
    lam = np.clip(lam, 0.0, None)
    z = (rng.standard_normal(len(lam)) + 1j * rng.standard_normal(len(lam))) / np.sqrt(2)
    u = V @ (np.sqrt(lam) * z)
    norm = np.linalg.norm(u)
    return u / norm if norm > 0 else u


def randomize(
    W,
    H,
    gs,
    J,
    P,
    sigma2,
    alpha,
    eta,
    n_rand: int,
    seed: int,
    *,
    delta: float = 1e-6,
    rank_tol: float = 1e-6,
    solver_tol: float = conic.DEFAULT_TOL,
) -> RandomizationResult:
    """Recover feasible rank-one beamformers from SDR matrices.

    Groups whose W_m is rank-one contribute their principal component
    directly. Otherwise candidate directions are drawn from CN(0, W_m),
    scaled by a power-control LP, and the feasible candidate of minimum
    network cost wins (ties broken by trial order). Raises
    RandomizationError when no trial is feasible.
    """
    L = len(J)
    n = np.asarray(H).shape[1]
    Nt = n // L
    M = gs.num_groups
    flags = [rank_one_check(Wm, rank_tol) for Wm in W]

    def finish(w_raw, used_sampling, feasible_trials):
        w, clusters, fallback = apply_cluster_threshold(
            w_raw, delta, H, gs, sigma2, P, L, Nt
        )
        cost, transmit, backhaul, clusters = beamformer_cost(w, alpha, eta, delta, L, Nt)
        return RandomizationResult(
            w=w,
            cost=cost,
            transmit_power=transmit,
            backhaul=backhaul,
            clusters=clusters,
            used_sampling=used_sampling,
            feasible_trials=feasible_trials,
            fallback_groups=fallback,
        )

    def certify(result):
        bound = support_restricted_bound(
            H, gs, J, P, sigma2, alpha, eta, result.clusters, delta, solver_tol
        )
        return replace(result, sdr_bound=bound)

    if all(flags):
        w_direct = [extract_rank_one(Wm, rank_tol) for Wm in W]
        if check_feasible(w_direct, H, gs, sigma2, P, L, Nt):
            return certify(finish(w_direct, False, 0))
        # Numerical residue from near-rank-one blocks: rescale the fixed
        # directions through the recovery LP before giving up on them.
        dirs = [wm / np.linalg.norm(wm) if np.linalg.norm(wm) else wm for wm in w_direct]
        beta = _power_control_lp(dirs, H, gs, J, P, sigma2, solver_tol)
        if beta is not None:
            w_scaled = [np.sqrt(b) * um for b, um in zip(beta, dirs)]
            if check_feasible(w_scaled, H, gs, sigma2, P, L, Nt):
                return certify(finish(w_scaled, False, 0))

    fixed_dirs = {}
    for m, (flag, Wm) in enumerate(zip(flags, W)):
        if flag:
            wm = extract_rank_one(Wm, rank_tol)
            norm = np.linalg.norm(wm)
            if norm > 0:
                fixed_dirs[m] = wm / norm

    def directions_for(trial: int):
        """Trial -1 is the deterministic principal-eigenvector candidate."""
        rng = stream(seed, "randomization", trial) if trial >= 0 else None
        dirs = []
        for m in range(M):
            if m in fixed_dirs:
                dirs.append(fixed_dirs[m])
            elif trial < 0:
                lam, V = np.linalg.eigh(W[m])
                dirs.append(V[:, -1])
            else:
                dirs.append(_sample_direction(W[m], rng))
        return dirs

    best = None
    feasible_trials = 0
    for trial in range(-1, n_rand):
        dirs = directions_for(trial)
        beta = _power_control_lp(dirs, H, gs, J, P, sigma2, solver_tol)
        if beta is None:
            continue
        w_cand = [np.sqrt(b) * um for b, um in zip(beta, dirs)]
        if not check_feasible(w_cand, H, gs, sigma2, P, L, Nt):
            continue
        feasible_trials += 1
        cand = finish(w_cand, True, feasible_trials)
        if best is None or cand.cost < best.cost:
            best = cand
    if best is None:
        raise RandomizationError(f"no feasible candidate in {n_rand} trials")
    return certify(replace(best, feasible_trials=feasible_trials))
