"""Linear SDP assembly and solving over complex Hermitian blocks.

Problems are block-structured:

    minimize    sum_m <A_m, W_m> + constant
    subject to  sum_m <B_{j,m}, W_m>  (>= or <=)  b_j      for each j
                W_m  PSD Hermitian, m = 1..M

with <X, Y> = Tr(X^H Y), real-valued for Hermitian arguments. Each complex
block is realized internally through the standard real symmetric embedding

    A = X + iY  ->  A~ = [[X, -Y], [Y, X]],

which satisfies <A, W> = (1/2) <A~, W~> and preserves PSD-ness, and the
embedded problem is handed to the Clarabel interior-point solver (its
homogeneous self-dual embedding provides infeasibility certificates).
Recovered blocks are projected back onto the embedded structure, which
keeps objective and constraint values exact and PSD-ness intact.

The debug dump format (see `dump_problem`) is line oriented:

    linear-sdp v1
    blocks <M>
    dims <n_1> ... <n_M>
    constant <c>
    objective <m>            followed by n_m rows of "re im re im ..."
    constraint <j> <sense> <rhs>
    block <m>                followed by n_m rows (only nonzero blocks)
    end
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

DEFAULT_TOL = 1e-7
_HERM_TOL = 1e-12

_SQRT2 = np.sqrt(2.0)
_svec_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


class AssemblyError(ValueError):
    """Inconsistent dimensions or non-Hermitian data at assembly time."""


class SolverFailure(RuntimeError):
    """The solve engine stopped without an optimal point or a certificate."""


def _check_hermitian(X: np.ndarray, what: str) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise AssemblyError(f"{what} must be square, got {X.shape}")
    scale = max(np.linalg.norm(X), 1.0)
    if np.linalg.norm(X - X.conj().T) > _HERM_TOL * scale:
        raise AssemblyError(f"{what} is not Hermitian")
    return 0.5 * (X + X.conj().T)


@dataclass(frozen=True)
class SdpConstraint:
    """One scalar constraint sum_m <B_m, W_m> sense rhs; None blocks are zero."""

    mats: tuple
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in (">=", "<="):
            raise AssemblyError(f"sense must be '>=' or '<=', got {self.sense!r}")


@dataclass(frozen=True)
class LinearSdp:
    block_dims: tuple[int, ...]
    objective: tuple
    constraints: tuple[SdpConstraint, ...]
    constant: float = 0.0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.block_dims)
        object.__setattr__(self, "block_dims", dims)
        if len(self.objective) != len(dims):
            raise AssemblyError("one objective matrix per block required")
        obj = []
        for m, (A, n) in enumerate(zip(self.objective, dims)):
            A = _check_hermitian(A, f"objective block {m}")
            if A.shape != (n, n):
                raise AssemblyError(f"objective block {m} has wrong dimension")
            obj.append(A)
        object.__setattr__(self, "objective", tuple(obj))
        cons = []
        for j, c in enumerate(self.constraints):
            if len(c.mats) != len(dims):
                raise AssemblyError(f"constraint {j} must list one matrix per block")
            mats = []
            for m, (B, n) in enumerate(zip(c.mats, dims)):
                if B is None:
                    mats.append(None)
                    continue
                B = _check_hermitian(B, f"constraint {j} block {m}")
                if B.shape != (n, n):
                    raise AssemblyError(f"constraint {j} block {m} has wrong dimension")
                mats.append(B)
            cons.append(SdpConstraint(mats=tuple(mats), sense=c.sense, rhs=float(c.rhs)))
        object.__setattr__(self, "constraints", tuple(cons))

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)


@dataclass(frozen=True)
class SdpSolution:
    blocks: tuple
    objective_value: float
    status: str  # optimal | infeasible | numerical_failure
    kkt_residual: float
    iterations: int = 0


def _svec_indices(d: int):
    """Row/col/scale arrays for the scaled upper-triangle column-major vec."""
    cached = _svec_cache.get(d)
    if cached is not None:
        return cached
    rows = np.array([i for j in range(d) for i in range(j + 1)])
    cols = np.array([j for j in range(d) for i in range(j + 1)])
    scale = np.where(rows == cols, 1.0, _SQRT2)
    _svec_cache[d] = (rows, cols, scale)
    return rows, cols, scale


def svec(S: np.ndarray) -> np.ndarray:
    """Scaled triangular vectorization with svec(S) . svec(T) = <S, T>."""
    rows, cols, scale = _svec_indices(S.shape[0])
    return S[rows, cols] * scale


def unsvec(x: np.ndarray, d: int) -> np.ndarray:
    rows, cols, scale = _svec_indices(d)
    S = np.zeros((d, d))
    S[rows, cols] = x / scale
    S[cols, rows] = S[rows, cols]
    return S


def embed_hermitian(A: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[X, -Y], [Y, X]] of a Hermitian matrix."""
    X, Y = A.real, A.imag
    return np.block([[X, -Y], [Y, X]])


def restrict_embedded(S: np.ndarray) -> np.ndarray:
    """Project a 2n x 2n symmetric matrix back to the complex block.

    Averaging over the embedding symmetry preserves PSD-ness and every
    inner product with an embedded Hermitian matrix.
    """
    n = S.shape[0] // 2
    X = 0.5 * (S[:n, :n] + S[n:, n:])
    Y = 0.5 * (S[n:, :n] - S[n:, :n].T)
    return X + 1j * Y


def _constraint_value(c: SdpConstraint, blocks) -> float:
    v = 0.0
    for B, W in zip(c.mats, blocks):
        if B is not None:
            v += float(np.real(np.sum(B.conj() * W)))
    return v


def solve(problem: LinearSdp, tol: float = DEFAULT_TOL) -> SdpSolution:
    """Solve a LinearSdp to the given tolerance.

    Returns status "optimal" with PSD blocks and a certified duality gap,
    "infeasible" when the solver produces a primal infeasibility
    certificate, and "numerical_failure" otherwise (callers must treat the
    latter as a hard error). Deterministic for identical inputs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    dims = problem.block_dims
    tri = [n * (2 * n + 1) for n in dims]  # svec length of each embedded block
    offsets = np.concatenate([[0], np.cumsum(tri)])
    nvar = int(offsets[-1])

    q = np.zeros(nvar)
    for m, A in enumerate(problem.objective):
        q[offsets[m] : offsets[m + 1]] = 0.5 * svec(embed_hermitian(A))
    # Reweighting objectives can span eight orders of magnitude, which
    # starves the interior-point scaling; normalizing the cost vector keeps
    # the argmin unchanged and the duality-gap criterion relative to the
    # objective's own scale. Reported objective values are recomputed from
    # the recovered blocks, so they are unaffected.
    q_scale = max(np.abs(q).max(), 1.0)
    q = q / q_scale

    n_lin = len(problem.constraints)
    lin = np.zeros((n_lin, nvar))
    b_lin = np.zeros(n_lin)
    for j, c in enumerate(problem.constraints):
        row = np.zeros(nvar)
        for m, B in enumerate(c.mats):
            if B is not None:
                row[offsets[m] : offsets[m + 1]] = 0.5 * svec(embed_hermitian(B))
        if c.sense == ">=":
            lin[j] = -row
            b_lin[j] = -c.rhs
        else:
            lin[j] = row
            b_lin[j] = c.rhs

    parts = []
    if n_lin:
        parts.append(sparse.csc_matrix(lin))
    parts.append(-sparse.identity(nvar, format="csc"))
    A_full = sparse.vstack(parts, format="csc")
    b_full = np.concatenate([b_lin, np.zeros(nvar)])
    cones = []
    if n_lin:
        cones.append(clarabel.NonnegativeConeT(n_lin))
    cones.extend(clarabel.PSDTriangleConeT(2 * n) for n in dims)

    P = sparse.csc_matrix((nvar, nvar))

    # Deterministic escalation ladder. The solver's own termination
    # criteria live in equilibrated units, so every returned iterate is
    # re-verified against the original data: a rung is accepted when its
    # primal residual and duality gap pass `tol` in those units, whatever
    # the status label says. Later rungs tighten the internal tolerances
    # and stiffen the KKT regularization, which lets stalled borderline
    # instances (for example late reweighting steps whose objective spans
    # eight orders of magnitude) reach a certifiable point.
    best = None
    for tol_factor, regularization in ((1.0, None), (1e-2, 1e-7), (1e-2, 1e-6)):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_threads = 1
        settings.tol_feas = tol * tol_factor
        settings.tol_gap_abs = tol * tol_factor
        settings.tol_gap_rel = tol * tol_factor
        if regularization is not None:
            settings.static_regularization_constant = regularization
        sol = clarabel.DefaultSolver(P, q, A_full, b_full, cones, settings).solve()
        status = str(sol.status)

        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SdpSolution(
                blocks=tuple(np.zeros((n, n), dtype=complex) for n in dims),
                objective_value=np.inf,
                status="infeasible",
                kkt_residual=np.inf,
                iterations=sol.iterations,
            )
        x = np.asarray(sol.x)
        if x.size != nvar or not np.all(np.isfinite(x)):
            continue
        blocks = tuple(
            restrict_embedded(unsvec(x[offsets[m] : offsets[m + 1]], 2 * n))
            for m, n in enumerate(dims)
        )
        gap = abs(sol.obj_val - sol.obj_val_dual) / (1.0 + abs(sol.obj_val))
        if not np.isfinite(gap):
            continue
        kkt = max(_primal_residual(problem, blocks), gap)
        if best is None or kkt < best[0]:
            obj = problem.constant + sum(
                float(np.real(np.sum(A.conj() * W)))
                for A, W in zip(problem.objective, blocks)
            )
            best = (kkt, blocks, obj, sol.iterations)
        if kkt <= tol:
            break

    if best is not None and best[0] <= tol:
        kkt, blocks, obj, iters = best
        return SdpSolution(
            blocks=blocks,
            objective_value=obj,
            status="optimal",
            kkt_residual=float(kkt),
            iterations=iters,
        )
    return SdpSolution(
        blocks=tuple(np.zeros((n, n), dtype=complex) for n in dims),
        objective_value=np.nan,
        status="numerical_failure",
        kkt_residual=np.inf if best is None else float(best[0]),
        iterations=0,
    )


def _primal_residual(problem: LinearSdp, blocks) -> float:
    """Worst relative constraint or PSD violation at the given blocks."""
    worst = 0.0
    for c in problem.constraints:
        v = _constraint_value(c, blocks)
        gap = (c.rhs - v) if c.sense == ">=" else (v - c.rhs)
        worst = max(worst, gap / (1.0 + abs(c.rhs)))
    for W in blocks:
        lam = np.linalg.eigvalsh(W)
        worst = max(worst, -lam[0] / (1.0 + max(lam[-1], 0.0)))
    return worst


def assemble_qos_sdp(
    H: np.ndarray,
    gamma,
    gs,
    J,
    P,
    sigma2: float,
    objective_blocks,
    constant: float = 0.0,
) -> LinearSdp:
    """Assemble the QoS-constrained SDP over per-group blocks.

    One SINR constraint per user k in group m,

        <H_k, W_m> - gamma_m * sum_{n != m} <H_k, W_n> >= gamma_m * sigma2,

    and one power constraint sum_m <J_l, W_m> <= P_l per BS. For numerical
    conditioning the SINR rows are divided through by sigma2 (the feasible
    set is unchanged). `gamma` may be a scalar or per-group vector; None
    takes the targets stored in the group set.
    """
    H = np.asarray(H)
    M = gs.num_groups
    n = H.shape[1]
    if gamma is None:
        gamma = np.array([g.gamma for g in gs.groups])
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (M,))
    P = np.broadcast_to(np.asarray(P, dtype=float), (len(J),))
    if sigma2 <= 0:
        raise AssemblyError("sigma2 must be positive")
    if any(Jl.shape != (n, n) for Jl in J):
        raise AssemblyError("selector matrices do not match channel dimension")
    if len(objective_blocks) != M:
        raise AssemblyError("one objective block per group required")

    constraints = []
    for m, g in enumerate(gs.groups):
        for k in g.members:
            if k >= H.shape[0]:
                raise AssemblyError(f"user {k} has no channel row")
            Hk = H[k] / sigma2
            mats = tuple(Hk if i == m else -gamma[m] * Hk for i in range(M))
            constraints.append(SdpConstraint(mats=mats, sense=">=", rhs=float(gamma[m])))
    for l, Jl in enumerate(J):
        constraints.append(
            SdpConstraint(mats=(Jl,) * M, sense="<=", rhs=float(P[l]))
        )
    return LinearSdp(
        block_dims=(n,) * M,
        objective=tuple(objective_blocks),
        constraints=tuple(constraints),
        constant=constant,
    )


def constraint_values(problem: LinearSdp, blocks) -> np.ndarray:
    """Evaluate every constraint's LHS at the given blocks."""
    return np.array([_constraint_value(c, blocks) for c in problem.constraints])


def _format_matrix(A: np.ndarray) -> list[str]:
    return [
        " ".join(f"{z.real!r} {z.imag!r}" for z in row)
        for row in np.asarray(A, dtype=complex)
    ]


def dump_problem(problem: LinearSdp) -> str:
    """Serialize a LinearSdp in the documented debug text format."""
    out = ["linear-sdp v1"]
    out.append(f"blocks {problem.num_blocks}")
    out.append("dims " + " ".join(str(n) for n in problem.block_dims))
    out.append(f"constant {problem.constant!r}")
    for m, A in enumerate(problem.objective):
        out.append(f"objective {m}")
        out.extend(_format_matrix(A))
    for j, c in enumerate(problem.constraints):
        out.append(f"constraint {j} {c.sense} {c.rhs!r}")
        for m, B in enumerate(c.mats):
            if B is None or not np.any(B):
                continue
            out.append(f"block {m}")
            out.extend(_format_matrix(B))
    out.append("end")
    return "\n".join(out) + "\n"
