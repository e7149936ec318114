"""Dense ADMM solver for convex quadratic programs.

    minimize    1/2 x^T Q x + q^T x
    subject to  A_eq x  = b_eq
                A_in x <= b_in

The iteration follows the operator-splitting scheme used by OSQP with a
fixed penalty, followed by an active-set polish that solves the reduced
KKT system directly.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog, lsq_linear

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QuadraticProgram:
    Q: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        N = Q.shape[0]
        if Q.shape != (N, N):
            raise ValueError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-10, rtol=0.0):
            raise ValueError("Q must be symmetric")
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if q.shape != (N,):
            raise ValueError(f"q has length {q.size}, expected {N}")
        A_eq, b_eq = _block(self.A_eq, self.b_eq, N, "equality")
        A_in, b_in = _block(self.A_in, self.b_in, N, "inequality")
        for name, v in (("Q", Q), ("q", q), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in), ("b_in", b_in)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "Q", (Q + Q.T) / 2)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n_var(self) -> int:
        return self.Q.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def residuals(self, x) -> tuple[float, float]:
        """(max |A_eq x - b_eq|, max(A_in x - b_in, 0))."""
        x = np.asarray(x, dtype=float)
        r_eq = float(np.abs(self.A_eq @ x - self.b_eq).max(initial=0.0))
        r_in = float(np.maximum(self.A_in @ x - self.b_in, 0.0).max(initial=0.0))
        return r_eq, r_in

    def with_inequalities(self, A, b) -> QuadraticProgram:
        return QuadraticProgram(
            self.Q, self.q, self.A_eq, self.b_eq,
            np.vstack([self.A_in, np.atleast_2d(A)]), np.concatenate([self.b_in, np.atleast_1d(b)]),
        )  # fmt: skip


def _block(A, b, N, what):
    if A is None or np.size(A) == 0:
        return np.zeros((0, N)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != N or A.shape[0] != b.size:
        raise ValueError(f"{what} block has shape {A.shape} with rhs {b.shape}; expected (*, {N})")
    return A, b


@dataclass
class Settings:
    rho: float = 1.0
    alpha: float = 1.6
    sigma: float = 1e-6
    eq_rho_scale: float = 1e3
    max_iter: int = 20000
    eps_prim: float = 1e-6
    eps_dual: float = 1e-6
    check_every: int = 25
    polish: bool = True
    polish_tol: float = 1e-7
    refine_steps: int = 20
    infeas_window: int = 5000
    eps_infeas: float = 1e-7


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: Status
    iterations: int
    residual_eq: float
    residual_in: float
    residual_dual: float = np.nan
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False
    certificate: np.ndarray | None = None  # dual ray for infeasible problems (eq rows, then in rows)

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


def _regularization(Q: np.ndarray) -> float:
    N = Q.shape[0]
    return max(1e-9 * float(np.trace(Q)) / N, 1e-12)


def _dual_residual(qp: QuadraticProgram, x, y_eq, y_in) -> float:
    r = qp.Q @ x + qp.q + qp.A_eq.T @ y_eq + qp.A_in.T @ y_in
    scale = max(
        1.0,
        float(np.abs(qp.Q @ x).max(initial=0.0)),
        float(np.abs(qp.q).max(initial=0.0)),
        float(np.abs(qp.A_eq.T @ y_eq).max(initial=0.0)),
        float(np.abs(qp.A_in.T @ y_in).max(initial=0.0)),
    )
    return float(np.abs(r).max(initial=0.0)) / scale


def _polish(qp: QuadraticProgram, x, y_in, settings: Settings):
    """Treat near-active inequalities as equalities and solve the KKT system."""
    slack = qp.b_in - qp.A_in @ x
    active = (slack <= settings.polish_tol * (1.0 + np.abs(qp.b_in))) | (y_in > settings.polish_tol)
    A = np.vstack([qp.A_eq, qp.A_in[active]])
    b = np.concatenate([qp.b_eq, qp.b_in[active]])
    N, M = qp.n_var, A.shape[0]
    eps = _regularization(qp.Q)
    K = np.block([[qp.Q + eps * np.eye(N), A.T], [A, -eps * np.eye(M)]])
    K_true = np.block([[qp.Q, A.T], [A, np.zeros((M, M))]])
    rhs = np.concatenate([-qp.q, b])
    try:
        lu = sla.lu_factor(K)
    except (ValueError, sla.LinAlgError):
        return None
    z = sla.lu_solve(lu, rhs)
    # refine against the unregularized system until corrections stop shrinking
    last = np.inf
    for _ in range(settings.refine_steps):
        dz = sla.lu_solve(lu, rhs - K_true @ z)
        size = float(np.abs(dz).max(initial=0.0))
        if not size < last:
            break
        z = z + dz
        last = size
    if not np.all(np.isfinite(z)):
        return None
    xp = z[:N]
    y_eq = z[N : N + len(qp.b_eq)]
    y_act = z[N + len(qp.b_eq) :]
    y_full = np.zeros(len(qp.b_in))
    y_full[active] = y_act
    r_eq, r_in = qp.residuals(xp)
    if r_eq > settings.eps_prim or r_in > settings.eps_prim:
        return None
    if np.any(y_act < -settings.eps_dual * max(1.0, np.abs(y_act).max(initial=0.0))):
        # degenerate active set: the KKT duals are not unique, pick a nonnegative set
        y_eq, y_full = _recover_multipliers(qp, xp, active)
    y_full = np.maximum(y_full, 0.0)
    if _dual_residual(qp, xp, y_eq, y_full) > settings.eps_dual:
        return None
    return xp, y_eq, y_full


def _cost_scale(qp: QuadraticProgram) -> float:
    """Scalar that brings the cost to unit size, so one fixed penalty suits every program."""
    size = max(float(np.abs(qp.Q).max(axis=0).mean()) if qp.n_var else 0.0, float(np.abs(qp.q).max(initial=0.0)))
    if size == 0.0:
        return 1.0
    return float(np.clip(1.0 / size, 1e-6, 1e6))


def solve(qp: QuadraticProgram, settings: Settings | None = None) -> QpSolution:
    c = _cost_scale(qp)
    if c == 1.0:
        return _solve(qp, settings or Settings())
    scaled = QuadraticProgram(c * qp.Q, c * qp.q, qp.A_eq, qp.b_eq, qp.A_in, qp.b_in)
    sol = _solve(scaled, settings or Settings())
    return replace(sol, objective=qp.objective(sol.x), y_eq=sol.y_eq / c, y_in=sol.y_in / c)


def _solve(qp: QuadraticProgram, s: Settings) -> QpSolution:
    N = qp.n_var
    E, I = len(qp.b_eq), len(qp.b_in)
    A = np.vstack([qp.A_eq, qp.A_in])
    lo = np.concatenate([qp.b_eq, np.full(I, -np.inf)])
    hi = np.concatenate([qp.b_eq, qp.b_in])
    # unit row scaling for conditioning; residuals below are always unscaled
    norms = np.abs(A).max(axis=1, initial=0.0) if len(A) else np.zeros(0)
    if np.any(norms == 0):
        zero = norms == 0
        if np.any(lo[zero] > 0) or np.any(hi[zero] < 0):
            return _infeasible(qp, np.zeros(N), 0, None)
        norms[zero] = 1.0
    As = A / norms[:, None]
    los, his = lo / norms, hi / norms
    rho = np.full(E + I, s.rho)
    rho[:E] *= s.eq_rho_scale

    Qr = qp.Q + _regularization(qp.Q) * np.eye(N)
    K = Qr + s.sigma * np.eye(N) + As.T @ (rho[:, None] * As)
    chol = sla.cho_factor(K)

    x = np.zeros(N)
    z = np.clip(np.zeros(E + I), los, his)
    y = np.zeros(E + I)
    history = []
    it = 0
    best = None
    feasible = None

    def finish(xf, y_eq, y_in, status, polished):
        r_eq, r_in = qp.residuals(xf)
        return QpSolution(
            xf, qp.objective(xf), status, it, r_eq, r_in,
            _dual_residual(qp, xf, y_eq, y_in), y_eq, y_in, polished,
        )  # fmt: skip

    for it in range(1, s.max_iter + 1):
        x_tilde = sla.cho_solve(chol, s.sigma * x - qp.q + As.T @ (rho * z - y))
        z_tilde = As @ x_tilde
        x_new = s.alpha * x_tilde + (1 - s.alpha) * x
        z_relax = s.alpha * z_tilde + (1 - s.alpha) * z
        z_new = np.clip(z_relax + y / rho, los, his)
        y_new = y + rho * (z_relax - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % s.check_every and it != s.max_iter:
            continue
        yu = y / norms
        y_eq, y_in = yu[:E], yu[E:]
        r_eq, r_in = qp.residuals(x)
        r_prim = max(r_eq, r_in)
        r_dual = _dual_residual(qp, x, y_eq, np.maximum(y_in, 0.0))
        history.append((it, r_prim, float(np.abs(y).max(initial=0.0))))
        if best is None or r_prim + r_dual < best[0]:
            best = (r_prim + r_dual, x.copy(), y_eq.copy(), np.maximum(y_in, 0.0))

        if r_prim <= 1e-3 and r_dual <= 1e-3 and s.polish:
            pol = _polish(qp, x, np.maximum(y_in, 0.0), s)
            if pol is not None:
                return finish(*pol, Status.SOLVED, True)
        if r_prim <= s.eps_prim and r_dual <= s.eps_dual:
            return finish(x, y_eq, np.maximum(y_in, 0.0), Status.SOLVED, False)

        cert = _certificate(qp, dy / norms, E, s.eps_infeas)
        if cert is not None:
            return _infeasible(qp, x, it, cert)
        if feasible is None and _stalled(history, s.infeas_window):
            # slow progress alone is not proof; confirm with a phase-1 program
            feasible = _constraints_feasible(qp)
            if not feasible:
                return _infeasible(qp, x, it, y / norms)

    _, xb, yeb, yib = best
    log.warning("QP hit the iteration cap (%d) without converging", s.max_iter)
    return finish(xb, yeb, yib, Status.MAX_ITER, False)


def _certificate(qp: QuadraticProgram, dy: np.ndarray, E: int, eps: float):
    """Farkas-type ray: A^T dy ~ 0 with b^T dy < 0 proves the constraints inconsistent."""
    norm = float(np.abs(dy).max(initial=0.0))
    if norm == 0.0:
        return None
    d = dy / norm
    d_eq, d_in = d[:E], d[E:]
    if np.any(d_in < -eps):
        # inequality multipliers of a ray must be nonnegative
        d_in = np.maximum(d_in, 0.0)
    At = qp.A_eq.T @ d_eq + qp.A_in.T @ d_in
    bt = qp.b_eq @ d_eq + qp.b_in @ d_in
    scale = max(1.0, float(np.abs(np.concatenate([qp.A_eq.ravel(), qp.A_in.ravel()])).max(initial=1.0)))
    if np.abs(At).max(initial=0.0) <= eps * scale and bt < -eps:
        return np.concatenate([d_eq, d_in])
    return None


def _stalled(history, window: int) -> bool:
    """Primal residual failed to drop 10x over the window while the duals kept growing."""
    if not history or history[-1][0] < window:
        return False
    it_now, r_now, y_now = history[-1]
    past = [h for h in history if h[0] <= it_now - window]
    if not past:
        return False
    _, r_then, y_then = past[-1]
    return r_now > 1e-4 and r_now > 0.1 * r_then and y_now > 10.0 * max(y_then, 1.0)


def _constraints_feasible(qp: QuadraticProgram) -> bool:
    N = qp.n_var
    res = linprog(
        np.zeros(N), A_ub=qp.A_in if len(qp.b_in) else None, b_ub=qp.b_in if len(qp.b_in) else None,
        A_eq=qp.A_eq if len(qp.b_eq) else None, b_eq=qp.b_eq if len(qp.b_eq) else None,
        bounds=[(None, None)] * N, method="highs",
    )  # fmt: skip
    return res.status != 2


def _infeasible(qp, x, it, cert) -> QpSolution:
    r_eq, r_in = qp.residuals(x)
    return QpSolution(x, qp.objective(x), Status.INFEASIBLE, it, r_eq, r_in, certificate=cert)


@dataclass
class KktReport:
    stationarity: float
    primal_eq: float
    primal_in: float
    complementarity: float
    dual_feasibility: float
    tolerance: float
    y_eq: np.ndarray
    y_in: np.ndarray

    @property
    def ok(self) -> bool:
        return max(
            self.stationarity, self.primal_eq, self.primal_in, self.complementarity, self.dual_feasibility
        ) <= self.tolerance

    def summary(self) -> str:
        return (
            f"stationarity={self.stationarity:.2e} primal_eq={self.primal_eq:.2e} "
            f"primal_in={self.primal_in:.2e} complementarity={self.complementarity:.2e} "
            f"dual={self.dual_feasibility:.2e} ({'ok' if self.ok else 'FAIL'} at {self.tolerance:g})"
        )


def _recover_multipliers(qp: QuadraticProgram, x, mask) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares multipliers for stationarity; free on equalities, >= 0 on masked rows."""
    g = qp.Q @ x + qp.q
    E = len(qp.b_eq)
    M = np.hstack([qp.A_eq.T, qp.A_in[mask].T])
    y_eq = np.zeros(E)
    y_in = np.zeros(len(qp.b_in))
    if M.shape[1]:
        lb = np.concatenate([np.full(E, -np.inf), np.zeros(int(mask.sum()))])
        res = lsq_linear(M, -g, bounds=(lb, np.full(M.shape[1], np.inf)), method="bvls", tol=1e-14)
        y_eq = res.x[:E]
        y_in[mask] = res.x[E:]
    return y_eq, y_in


def kkt_check(qp: QuadraticProgram, x, tolerance: float = 1e-6) -> KktReport:
    """Independent optimality certificate: multipliers recovered by bounded least squares.

    Inequalities within ``tolerance`` (relative to 1 + |b|) of activity may
    carry a nonnegative multiplier; all others are forced to zero.
    """
    x = np.asarray(x, dtype=float)
    g = qp.Q @ x + qp.q
    slack = qp.b_in - qp.A_in @ x
    near = slack <= tolerance * (1.0 + np.abs(qp.b_in))
    y_eq, y_in = _recover_multipliers(qp, x, near)
    r = g + qp.A_eq.T @ y_eq + qp.A_in.T @ y_in
    scale = max(1.0, float(np.abs(qp.Q @ x).max(initial=0.0)), float(np.abs(qp.q).max(initial=0.0)))
    r_eq, r_in = qp.residuals(x)
    comp = float(np.abs(y_in * np.maximum(slack, 0.0)).max(initial=0.0)) / scale
    return KktReport(
        stationarity=float(np.abs(r).max(initial=0.0)) / scale,
        primal_eq=r_eq,
        primal_in=r_in,
        complementarity=comp,
        dual_feasibility=float(np.maximum(-y_in, 0.0).max(initial=0.0)),
        tolerance=tolerance,
        y_eq=y_eq,
        y_in=y_in,
    )
