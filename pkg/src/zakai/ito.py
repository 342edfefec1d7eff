"""Finite-dimensional checks of the Itô calculus used by the transform method.

* ``trace``: ``Tr_{R,S} T = sum_n T(R h_n, S h_n)`` over an orthonormal basis.
* ``ito_residual``: discrete residual of the Itô formula for ``f(t, zeta(t))``
  along an Euler-Maruyama trajectory.
* ``bilinear_residual``: the product rule for a pairing of two Itô processes.
* ``group_adjoint_check``: Itô expansion of ``exp(-sum_n W_n(t) B_n)^T x*``.

Every integral is a left-point sum.  The second-order term is integrated
either against ``dt`` (``quadrature="lebesgue"``) or against the realized
increments ``dW dW^T`` (``"realized"``); with the latter the exactness
classes (linear ``f`` with constant integrands, quadratic ``f`` with constant
``Phi`` and zero drift) telescope to round-off.

Contracts are batched: states have shape ``(..., m)``, ``psi`` returns
``(..., m)``, ``Phi`` returns ``(..., m, N_w)``, the gradient ``(..., m)``
and the Hessian ``(..., m, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .fitting import fit_order
from .paths import BrownianPath, TimeGrid, stack_values

__all__ = [
    "LinearMap",
    "BilinearOnPair",
    "TestFunction",
    "ItoSystem",
    "ResidualLadder",
    "trace",
    "random_orthonormal",
    "simulate_ito",
    "ito_residual",
    "bilinear_residual",
    "group_adjoint_check",
    "residual_ladder",
]

_QUADRATURES = ("lebesgue", "realized")


# -- linear algebra --------------------------------------------------------


@dataclass(frozen=True)
class LinearMap:
    """Matrix of a map ``R^n -> R^m``; the Frobenius norm is its gamma-norm."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.ndim != 2:
            raise ValueError("a linear map needs a 2D matrix")
        if not np.all(np.isfinite(mat)):
            raise ValueError("linear map has non-finite entries")
        object.__setattr__(self, "matrix", mat)

    @property
    def domain_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def codomain_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def __call__(self, x):
        return self.matrix @ x


class BilinearOnPair:
    """Bilinear map ``T: R^m1 x R^m2 -> R^k``, given by a callable or a tensor.

    ``tensor[l, i, j]`` is the ``l``-th output on the basis pair ``(e_i, e_j)``.
    """

    def __init__(self, fn: Callable | None, m1: int, m2: int, k: int = 1, tensor=None):
        self.m1, self.m2, self.k = int(m1), int(m2), int(k)
        self._fn = fn
        self._tensor = None if tensor is None else np.asarray(tensor, dtype=float)
        if self._tensor is not None and self._tensor.shape != (self.k, self.m1, self.m2):
            raise ValueError("tensor shape does not match (k, m1, m2)")

    @classmethod
    def from_tensor(cls, tensor) -> "BilinearOnPair":
        t = np.asarray(tensor, dtype=float)
        if t.ndim == 2:
            t = t[None]
        return cls(None, t.shape[1], t.shape[2], t.shape[0], t)

    @classmethod
    def dot(cls, m: int) -> "BilinearOnPair":
        """The Euclidean pairing ``x^T y``."""
        return cls.from_tensor(np.eye(m)[None])

    @property
    def tensor(self) -> np.ndarray:
        if self._tensor is None:
            t = np.empty((self.k, self.m1, self.m2))
            e1, e2 = np.eye(self.m1), np.eye(self.m2)
            for i in range(self.m1):
                for j in range(self.m2):
                    t[:, i, j] = np.reshape(self._fn(e1[i], e2[j]), self.k)
            self._tensor = t
        return self._tensor

    def __call__(self, x, y):
        """Batched evaluation: ``x`` of shape ``(..., m1)``, ``y`` of ``(..., m2)``."""
        if self._fn is not None and self._tensor is None:
            return np.asarray(self._fn(x, y), dtype=float)
        return np.einsum("lij,...i,...j->...l", self.tensor, x, y)

    def norm(self, restarts: int = 20, iters: int = 200, seed: int = 0) -> float:
        """``sup ||T(x, y)||`` over unit vectors.

        Exact (largest singular value) for ``k = 1``; otherwise the best of
        several alternating-maximization runs, which is a lower bound.
        """
        t = self.tensor
        if self.k == 1:
            return float(np.linalg.norm(t[0], 2))
        rng = np.random.default_rng(seed)
        best = 0.0
        for _ in range(restarts):
            x = rng.standard_normal(self.m1)
            x /= np.linalg.norm(x)
            y = rng.standard_normal(self.m2)
            y /= np.linalg.norm(y)
            for _ in range(iters):
                # fix y: T(., y) is a k x m1 matrix; take its top right singular vector
                _, _, vt = np.linalg.svd(np.einsum("lij,j->li", t, y))
                x = vt[0]
                u, s, vt = np.linalg.svd(np.einsum("lij,i->lj", t, x))
                y = vt[0]
            best = max(best, float(np.linalg.norm(np.einsum("lij,i,j->l", t, x, y))))
        return best

    def check_bilinear(self, trials: int = 20, tol: float = 1e-12, seed: int = 0) -> float:
        """Largest relative bilinearity defect on random triples; raises above ``tol``."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            x, x2 = rng.standard_normal((2, self.m1))
            y, y2 = rng.standard_normal((2, self.m2))
            a = rng.standard_normal()
            lhs1 = np.reshape(self(a * x + x2, y), self.k)
            rhs1 = a * np.reshape(self(x, y), self.k) + np.reshape(self(x2, y), self.k)
            lhs2 = np.reshape(self(x, a * y + y2), self.k)
            rhs2 = a * np.reshape(self(x, y), self.k) + np.reshape(self(x, y2), self.k)
            scale = 1.0 + np.max(np.abs(rhs1)) + np.max(np.abs(rhs2))
            worst = max(worst, float(np.max(np.abs(lhs1 - rhs1)) / scale), float(np.max(np.abs(lhs2 - rhs2)) / scale))
        if worst > tol:
            raise ValueError(f"map is not bilinear: defect {worst:.3g}")
        return worst


def random_orthonormal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Columns of ``Q`` from the QR factorization of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def trace(R: LinearMap, S: LinearMap, T: BilinearOnPair, basis=None) -> np.ndarray:
    """``sum_n T(R h_n, S h_n)`` over the orthonormal columns ``h_n`` of ``basis``."""
    if R.domain_dim != S.domain_dim:
        raise ValueError("R and S must share their domain")
    if R.codomain_dim != T.m1 or S.codomain_dim != T.m2:
        raise ValueError("T does not accept the ranges of R and S")
    n = R.domain_dim
    h = np.eye(n) if basis is None else np.asarray(basis, dtype=float)
    if h.shape != (n, n):
        raise ValueError(f"basis must be {n} x {n}")
    if np.max(np.abs(h.T @ h - np.eye(n))) > 1e-12:
        raise ValueError("basis is not orthonormal")
    rh = (R.matrix @ h).T
    shh = (S.matrix @ h).T
    vals = np.reshape(T(rh, shh), (n, T.k))
    return vals.sum(axis=0)


# -- Itô processes ---------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """``f(t, x)`` with ``D_1 f``, gradient ``D_2 f`` and Hessian ``D_2^2 f``."""

    __test__ = False

    f: Callable
    d1: Callable
    grad: Callable
    hess: Callable
    name: str = ""

    def validate(self, points: np.ndarray, times: np.ndarray, step: float = 1e-5, tol: float = 1e-6) -> float:
        """Compare the derivative contracts with central differences; raise on mismatch.

        Returns the largest relative defect found.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[1]
        worst = 0.0

        def rel(a, b):
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))

        for x, t in zip(points, np.broadcast_to(times, points.shape[:1])):
            d1 = (self.f(t + step, x) - self.f(t - step, x)) / (2 * step)
            worst = max(worst, rel(d1, self.d1(t, x)))
            e = np.eye(m) * step
            g = np.array([(self.f(t, x + e[i]) - self.f(t, x - e[i])) / (2 * step) for i in range(m)])
            worst = max(worst, rel(g, self.grad(t, x)))
            hs = np.array([(self.grad(t, x + e[i]) - self.grad(t, x - e[i])) / (2 * step) for i in range(m)])
            worst = max(worst, rel(hs, self.hess(t, x)))
        if worst > tol:
            raise ValueError(f"derivative contract of {self.name or 'f'} fails: defect {worst:.3g}")
        return worst


@dataclass(frozen=True)
class ItoSystem:
    """``zeta = xi + int psi(s, zeta) ds + int Phi(s, zeta) dW`` with an optional test function."""

    dim: int
    n_drivers: int
    xi: np.ndarray
    psi: Callable
    phi: Callable
    test: TestFunction | None = None
    name: str = ""

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(self.dim)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def affine(cls, xi, drift_mat, drift_vec, diff_mats, diff_vecs, test=None, name="") -> "ItoSystem":
        """``psi = P zeta + p``, ``Phi_n = Q_n zeta + q_n`` (``diff_mats``: ``(N_w, m, m)``, ``diff_vecs``: ``(N_w, m)``)."""
        P = np.asarray(drift_mat, dtype=float)
        p = np.asarray(drift_vec, dtype=float)
        Q = np.asarray(diff_mats, dtype=float)
        q = np.asarray(diff_vecs, dtype=float)
        m, nw = P.shape[0], Q.shape[0]
        psi = lambda t, z: z @ P.T + p
        phi = lambda t, z: np.einsum("nij,...j->...in", Q, z) + q.T
        return cls(m, nw, xi, psi, phi, test, name)


def _as_batch(path):
    """``(W (M, N + 1, N_w), TimeGrid, single)`` from a path, a list of paths, or ``(W, grid)``."""
    if isinstance(path, BrownianPath):
        return path.values[None], path.grid, True
    if isinstance(path, tuple):
        W, grid = path
        W = np.asarray(W, dtype=float)
        return (W[None], grid, True) if W.ndim == 2 else (W, grid, False)
    paths = list(path)
    return stack_values(paths), paths[0].grid, False


def _eval_phi(system, t, z):
    out = np.asarray(system.phi(t, z), dtype=float)
    return np.broadcast_to(out, z.shape[:-1] + (system.dim, system.n_drivers))


def _eval_psi(system, t, z):
    return np.broadcast_to(np.asarray(system.psi(t, z), dtype=float), z.shape)


def simulate_ito(system: ItoSystem, path) -> np.ndarray:
    """Euler-Maruyama trajectory ``zeta_{k+1} = zeta_k + psi_k dt + Phi_k dW_k``.

    Returns ``(N + 1, m)`` for one path, ``(M, N + 1, m)`` for several.
    """
    W, grid, single = _as_batch(path)
    if W.shape[2] != system.n_drivers:
        raise ValueError("driver dimension does not match the system")
    m_paths, n1 = W.shape[:2]
    dw = np.diff(W, axis=1)
    z = np.empty((m_paths, n1, system.dim))
    z[:, 0] = system.xi
    t = grid.nodes
    for k in range(n1 - 1):
        zk = z[:, k]
        z[:, k + 1] = zk + _eval_psi(system, t[k], zk) * grid.dt + np.einsum(
            "...in,...n->...i", _eval_phi(system, t[k], zk), dw[:, k]
        )
        if not np.all(np.isfinite(z[:, k + 1])):
            raise FloatingPointError(f"non-finite state at step {k + 1}")
    return z[0] if single else z


def _second_order(phi, hess, dw, dt, quadrature):
    """``1/2 Tr_{Phi, Phi} D^2 f`` over one step, by ``dt`` or by realized increments."""
    if quadrature == "lebesgue":
        return 0.5 * dt * np.einsum("...in,...ij,...jn->...", phi, hess, phi)
    if quadrature == "realized":
        v = np.einsum("...in,...n->...i", phi, dw)
        return 0.5 * np.einsum("...i,...ij,...j->...", v, hess, v)
    raise ValueError(f"quadrature must be one of {_QUADRATURES}")


def ito_residual(
    system: ItoSystem,
    path,
    f: TestFunction | None = None,
    trajectory: np.ndarray | None = None,
    quadrature: str = "lebesgue",
    validate: bool = True,
):
    """``sup_k |f(t_k, zeta_k) - f(0, xi) - RHS_k|`` with left-point sums.

    ``RHS_k = sum_{j<k} [D_1 f dt + D_2 f psi dt + D_2 f Phi dW_j + 1/2 Tr_{Phi} D_2^2 f]``.
    Returns a float for one path and an array of per-path values otherwise.
    """
    f = f or system.test
    if f is None:
        raise ValueError("no test function given")
    W, grid, single = _as_batch(path)
    z = simulate_ito(system, (W, grid)) if trajectory is None else np.asarray(trajectory, dtype=float)
    if z.ndim == 2:
        z = z[None]
    if validate:
        rng = np.random.default_rng(0)
        pick = z.reshape(-1, system.dim)[rng.integers(0, z.shape[0] * z.shape[1], 5)]
        f.validate(pick, grid.horizon * rng.random(5))
    t = grid.nodes
    dt = grid.dt
    dw = np.diff(W, axis=1)
    lhs0 = np.asarray(f.f(0.0, z[:, 0]), dtype=float)
    acc = np.zeros(z.shape[0])
    worst = np.zeros(z.shape[0])
    for k in range(z.shape[1] - 1):
        zk = z[:, k]
        g = np.asarray(f.grad(t[k], zk), dtype=float)
        phi = _eval_phi(system, t[k], zk)
        acc = acc + np.asarray(f.d1(t[k], zk), dtype=float) * dt
        acc = acc + np.einsum("...i,...i->...", g, _eval_psi(system, t[k], zk)) * dt
        acc = acc + np.einsum("...i,...in,...n->...", g, phi, dw[:, k])
        acc = acc + _second_order(phi, np.asarray(f.hess(t[k], zk), dtype=float), dw[:, k], dt, quadrature)
        lhs = np.asarray(f.f(t[k + 1], z[:, k + 1]), dtype=float) - lhs0
        worst = np.maximum(worst, np.abs(lhs - acc))
    return float(worst[0]) if single else worst


def bilinear_residual(
    sys1: ItoSystem,
    sys2: ItoSystem,
    pairing: BilinearOnPair | None,
    path,
    quadrature: str = "lebesgue",
):
    """Residual of the product rule for ``P(zeta_1, zeta_2)`` with a scalar pairing ``P``.

    ``dP = P(d zeta_1, zeta_2) + P(zeta_1, d zeta_2) + sum_n P(Phi_1 h_n, Phi_2 h_n) dt``.
    """
    if sys1.n_drivers != sys2.n_drivers:
        raise ValueError("the two systems must share their drivers")
    if pairing is None:
        if sys1.dim != sys2.dim:
            raise ValueError("the default pairing needs equal dimensions")
        pairing = BilinearOnPair.dot(sys1.dim)
    if (pairing.m1, pairing.m2) != (sys1.dim, sys2.dim) or pairing.k != 1:
        raise ValueError("pairing does not match the two state spaces")
    W, grid, single = _as_batch(path)
    z1 = simulate_ito(sys1, (W, grid))
    z2 = simulate_ito(sys2, (W, grid))
    if z1.ndim == 2:
        z1, z2 = z1[None], z2[None]
    T = pairing.tensor[0]
    P = lambda x, y: np.einsum("ij,...i,...j->...", T, x, y)
    t, dt = grid.nodes, grid.dt
    dw = np.diff(W, axis=1)
    lhs0 = P(z1[:, 0], z2[:, 0])
    acc = np.zeros(z1.shape[0])
    worst = np.zeros(z1.shape[0])
    for k in range(z1.shape[1] - 1):
        a, b = z1[:, k], z2[:, k]
        p1, p2 = _eval_phi(sys1, t[k], a), _eval_phi(sys2, t[k], b)
        d1 = _eval_psi(sys1, t[k], a) * dt + np.einsum("...in,...n->...i", p1, dw[:, k])
        d2 = _eval_psi(sys2, t[k], b) * dt + np.einsum("...in,...n->...i", p2, dw[:, k])
        acc = acc + P(d1, b) + P(a, d2)
        if quadrature == "lebesgue":
            acc = acc + dt * np.einsum("ij,...in,...jn->...", T, p1, p2)
        elif quadrature == "realized":
            acc = acc + P(np.einsum("...in,...n->...i", p1, dw[:, k]), np.einsum("...in,...n->...i", p2, dw[:, k]))
        else:
            raise ValueError(f"quadrature must be one of {_QUADRATURES}")
        lhs = P(z1[:, k + 1], z2[:, k + 1]) - lhs0
        worst = np.maximum(worst, np.abs(lhs - acc))
    return float(worst[0]) if single else worst


# -- group adjoint expansion ---------------------------------------------------


def _check_commuting_matrices(mats, tol=1e-12):
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            a, b = mats[i], mats[j]
            scale = 1.0 + np.linalg.norm(a) * np.linalg.norm(b)
            if np.max(np.abs(a @ b - b @ a)) > tol * scale:
                raise ValueError(f"generators {i} and {j} do not commute")


def _adjoint_orbit(mats, x_star, W):
    """``exp(-sum_n W_n B_n)^T x*`` for all ``W`` of shape ``(..., N_w)``.

    Commuting diagonalizable generators share eigenvectors; when a random
    combination has well separated eigenvalues the exponential is taken in
    that basis, otherwise by batched ``expm``.
    """
    bt = np.stack([m.T for m in mats])
    m = bt.shape[1]
    rng = np.random.default_rng(12345)
    comb = np.tensordot(rng.standard_normal(len(mats)), bt, axes=1)
    lam, vec = np.linalg.eig(comb)
    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    if np.min(gaps) > 1e-6 * (1 + np.max(np.abs(lam))) and np.linalg.cond(vec) < 1e8:
        inv = np.linalg.inv(vec)
        diag = np.einsum("ij,njk,ki->ni", inv, bt, vec)
        off = np.einsum("ij,njk,kl->nil", inv, bt, vec) - np.einsum("ni,il->nil", diag, np.eye(m))
        if np.max(np.abs(off)) <= 1e-10 * (1 + np.max(np.abs(bt))):
            coef = inv @ x_star
            ex = np.exp(-np.einsum("...n,ni->...i", W, diag))
            return np.real(np.einsum("ij,...j->...i", vec, ex * coef))
    gen = -np.einsum("...n,nij->...ij", W, bt)
    return np.einsum("...ij,j->...i", sla.expm(gen), x_star)


def group_adjoint_check(generators: Sequence, x_star, path):
    """Sup-norm residual of the Itô expansion of ``y(t) = exp(-sum_n W_n(t) B_n)^T x*``.

    ``y(t) - x* = -sum_n int y(s)^* B_n^* dW_n + 1/2 sum_n int B_n^{2*} y(s) ds``
    (the generators commute, so ``B_n^T`` may act on either side of the
    exponential).  Left-point sums; one float per path.
    """
    mats = [np.atleast_2d(np.asarray(b, dtype=float)) for b in generators]
    if not mats:
        raise ValueError("at least one generator is required")
    _check_commuting_matrices(mats)
    x_star = np.asarray(x_star, dtype=float)
    W, grid, single = _as_batch(path)
    if W.shape[2] != len(mats):
        raise ValueError("one driver per generator is required")
    y = _adjoint_orbit(mats, x_star, W)
    bt = np.stack([m.T for m in mats])
    dw = np.diff(W, axis=1)
    by = np.einsum("nij,...j->...ni", bt, y[:, :-1])
    b2y = np.einsum("nij,...nj->...i", bt, by)
    incr = -np.einsum("...ni,...n->...i", by, dw) + 0.5 * grid.dt * b2y
    rhs = np.cumsum(incr, axis=1)
    res = np.max(np.abs(y[:, 1:] - x_star - rhs), axis=(1, 2))
    return float(res[0]) if single else res


# -- order ladders -----------------------------------------------------------


@dataclass
class ResidualLadder:
    """RMS over paths of a per-path residual along a step ladder."""

    dts: list
    rms: list
    order: float
    n_paths: int

    def as_dict(self) -> dict:
        return {"dts": self.dts, "rms": self.rms, "order": self.order, "n_paths": self.n_paths}


def residual_ladder(fn: Callable, paths, factors=(64, 32, 16, 8, 4, 2, 1)) -> ResidualLadder:
    """Evaluate ``fn((W, grid))`` on coarsened copies of fine ``paths`` and fit the order."""
    paths = list(paths)
    W = stack_values(paths)
    fine = paths[0].grid
    dts, rms = [], []
    for f in sorted(factors, reverse=True):
        g = fine.coarsen(f)
        r = np.asarray(fn((W[:, ::f], g)), dtype=float)
        dts.append(g.dt)
        rms.append(float(np.sqrt(np.mean(r**2))))
    order, _ = fit_order(dts, rms)
    return ResidualLadder(dts, rms, order, len(paths))
