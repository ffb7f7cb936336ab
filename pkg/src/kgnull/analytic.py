"""Closed-form spacetime test functions and the null-form identity suite.

Test functions are products of Gaussians ``exp(-z.Q.z)`` in ``z = (t, x) - center``
with exact first and second derivatives. The identities are checked against
complex-step derivatives, which are exact to round-off for analytic functions
and share no code with the closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .system import q0, qab

__all__ = [
    "GaussianFactor",
    "AnalyticFunction",
    "random_pair",
    "random_cone_points",
    "IdentityResult",
    "run_identity_suite",
]

_H = 1e-30  # complex-step increment


@dataclass
class GaussianFactor:
    center: np.ndarray  # (4,)  (t, x1, x2, x3)
    quad: np.ndarray  # (4, 4) symmetric positive definite


@dataclass
class AnalyticFunction:
    """``amp * prod_k exp(-(p - c_k) . Q_k . (p - c_k))`` at spacetime points ``p``.

    Points are arrays of shape (4, ...); complex points are allowed.
    """

    amp: float
    factors: list[GaussianFactor] = field(default_factory=list)

    def _phase(self, p):
        phi = 0.0
        dphi = 0.0
        hphi = 0.0
        for f in self.factors:
            z = p - f.center.reshape((4,) + (1,) * (p.ndim - 1))
            qz = np.einsum("ab,b...->a...", f.quad, z)
            phi = phi + np.einsum("a...,a...->...", z, qz)
            dphi = dphi + 2.0 * qz
            hphi = hphi + 2.0 * f.quad.reshape((4, 4) + (1,) * (p.ndim - 1))
        return phi, dphi, hphi

    def value(self, p):
        phi, _, _ = self._phase(p)
        return self.amp * np.exp(-phi)

    def grad(self, p):
        """(4, ...) array of ``d_alpha`` derivatives."""
        phi, dphi, _ = self._phase(p)
        return -self.amp * np.exp(-phi) * dphi

    def hess(self, p):
        """(4, 4, ...) array of ``d_alpha d_beta`` derivatives."""
        phi, dphi, hphi = self._phase(p)
        g = self.amp * np.exp(-phi)
        return g * (np.einsum("a...,b...->ab...", dphi, dphi) - hphi)


def _random_spd(rng: np.random.Generator, lo: float, hi: float) -> np.ndarray:
    a = rng.normal(size=(4, 4))
    q, _ = np.linalg.qr(a)
    return q @ np.diag(rng.uniform(lo, hi, size=4)) @ q.T


def random_cone_points(rng: np.random.Generator, count: int, t_range=(2.0, 12.0)) -> np.ndarray:
    """Points with ``t >= |x| + 1`` and ``t >= 2``; shape (4, count)."""
    t = rng.uniform(*t_range, size=count)
    r = (t - 1.0) * rng.uniform(0.0, 1.0, size=count) ** (1 / 3)
    d = rng.normal(size=(3, count))
    d /= np.linalg.norm(d, axis=0)
    return np.vstack([t, r * d])


def random_function(rng: np.random.Generator, near: np.ndarray, n_factors: int = 2) -> AnalyticFunction:
    factors = []
    for _ in range(n_factors):
        c = near + rng.normal(scale=0.5, size=4)
        factors.append(GaussianFactor(c, _random_spd(rng, 0.05, 0.4)))
    return AnalyticFunction(float(rng.uniform(0.5, 2.0)), factors)


def random_pair(rng: np.random.Generator, near: np.ndarray) -> tuple[AnalyticFunction, AnalyticFunction]:
    return random_function(rng, near), random_function(rng, near)


def complex_step(fun, p: np.ndarray, alpha: int) -> np.ndarray:
    """``d_alpha fun`` at real points ``p`` via the complex-step formula."""
    q = p.astype(complex)
    q[alpha] += 1j * _H
    return np.imag(fun(q)) / _H


# -- derived operators on closed forms ----------------------------------------

def boost_value(f: AnalyticFunction, p, a: int):
    g = f.grad(p)
    return p[a] * g[0] + p[0] * g[a]


def boost_grad(f: AnalyticFunction, p, a: int):
    """``d_beta (L_a f)`` from the closed-form Hessian."""
    g, h = f.grad(p), f.hess(p)
    out = p[a] * h[0] + p[0] * h[a]
    out[a] = out[a] + g[0]
    out[0] = out[0] + g[a]
    return out


def rotation_value(f: AnalyticFunction, p, a: int, b: int):
    g = f.grad(p)
    return p[a] * g[b] - p[b] * g[a]


def frame_q0(du, dw, p):
    """``Q0`` expanded in the semi-hyperboloidal frame."""
    t, x = p[0], p[1:]
    s2 = t * t - np.sum(x * x, axis=0)
    gu = [du[a] + x[a - 1] / t * du[0] for a in (1, 2, 3)]
    gw = [dw[a] + x[a - 1] / t * dw[0] for a in (1, 2, 3)]
    out = -s2 / t**2 * du[0] * dw[0]
    for a in range(3):
        out = out - x[a] / t * (du[0] * gw[a] + dw[0] * gu[a]) + gu[a] * gw[a]
    return out


@dataclass
class IdentityResult:
    name: str
    max_residual: float
    tolerance: float
    n_checks: int

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tolerance


def _rel(lhs, rhs, *scale_terms) -> float:
    scale = np.abs(lhs) + np.abs(rhs)
    for s in scale_terms:
        scale = scale + np.abs(s)
    scale = np.maximum(scale, 1e-300)
    return float(np.max(np.abs(lhs - rhs) / scale))


def run_identity_suite(n_pairs: int = 20, points_per_pair: int = 16, seed: int = 20200401, tolerance: float = 1e-8):
    """Check every null-form and commutator identity on random analytic pairs.

    Residuals are relative to the summed magnitude of the terms involved.
    Returns a list of :class:`IdentityResult`.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    counts: dict[str, int] = {}

    def note(name, r):
        worst[name] = max(worst.get(name, 0.0), r)
        counts[name] = counts.get(name, 0) + 1

    bound_ratio = 0.0
    for _ in range(n_pairs):
        p = random_cone_points(rng, points_per_pair)
        u, w = random_pair(rng, p[:, 0])
        # evaluate around the pair's own centre so values are not negligible
        centre = np.mean([f.center for f in u.factors + w.factors], axis=0)
        p = np.hstack([p, _cone_points_near(rng, centre, points_per_pair)])
        du, dw = u.grad(p), w.grad(p)
        hu, hw = u.hess(p), w.hess(p)

        lhs = q0(du, dw)
        note("semi-hyperboloidal Q0 expansion", _rel(lhs, frame_q0(du, dw, p), du[0] * dw[0], np.sum(du * dw, axis=0)))

        for a in range(4):
            for b in range(a + 1, 4):
                direct = qab(du, dw, a, b)
                div = complex_step(lambda q: u.value(q) * w.grad(q)[b], p, a) - complex_step(
                    lambda q: u.value(q) * w.grad(q)[a], p, b
                )
                note("Q_ab divergence form", _rel(direct, div, du[a] * dw[b], du[b] * dw[a]))

        q0_fun = lambda q: q0(u.grad(q), w.grad(q))  # noqa: E731
        for g in range(4):
            lhs = complex_step(q0_fun, p, g)
            rhs = q0(hu[g], dw) + q0(du, hw[g])
            note("d_gamma Q0 commutation", _rel(lhs, rhs))
            for a in range(4):
                for b in range(a + 1, 4):
                    lhs = complex_step(lambda q: qab(u.grad(q), w.grad(q), a, b), p, g)
                    rhs = qab(hu[g], dw, a, b) + qab(du, hw[g], a, b)
                    note("d_gamma Q_ab commutation", _rel(lhs, rhs))

        for a in (1, 2, 3):
            dq = [complex_step(q0_fun, p, g) for g in range(4)]
            lq0 = p[a] * dq[0] + p[0] * dq[a]
            rhs = q0(boost_grad(u, p, a), dw) + q0(du, boost_grad(w, p, a))
            note("L_a Q0 commutation", _rel(lq0, rhs))
            for al in range(4):
                for be in range(al + 1, 4):
                    fun = lambda q: qab(u.grad(q), w.grad(q), al, be)  # noqa: E731
                    lq = p[a] * complex_step(fun, p, 0) + p[0] * complex_step(fun, p, a)
                    defect = lq - qab(boost_grad(u, p, a), dw, al, be) - qab(du, boost_grad(w, p, a), al, be)
                    total = sum(np.abs(qab(du, dw, x, y)) for x in range(4) for y in range(4))
                    excess = np.max(np.abs(defect) - total) / max(np.max(total), 1e-300)
                    note("L_a Q_ab defect bound", max(excess, 0.0))

        # commutators of vector fields, applied to u
        gu = u.grad(p)
        for a in (1, 2, 3):
            lu = lambda q, a=a: boost_value(u, q, a)  # noqa: E731
            for b in (0, 1, 2, 3):
                comm = complex_step(lu, p, b) - (p[a] * hu[0, b] + p[0] * hu[a, b])
                expect = gu[a] if b == 0 else (gu[0] if a == b else np.zeros_like(gu[0]))
                note("[d_alpha, L_a] commutator", _rel(comm, expect, complex_step(lu, p, b)))
            for b in (1, 2, 3):
                if b == a:
                    continue
                lb = lambda q, b=b: boost_value(u, q, b)  # noqa: E731
                la_lb = p[a] * complex_step(lb, p, 0) + p[0] * complex_step(lb, p, a)
                lb_la = p[b] * complex_step(lu, p, 0) + p[0] * complex_step(lu, p, b)
                note("[L_a, L_b] = Omega_ab", _rel(la_lb - lb_la, rotation_value(u, p, a, b), la_lb, lb_la))
            for (c1, c2) in ((1, 2), (1, 3), (2, 3)):
                om = lambda q: rotation_value(u, q, c1, c2)  # noqa: E731
                l_om = p[a] * complex_step(om, p, 0) + p[0] * complex_step(om, p, a)
                om_l = p[c1] * complex_step(lu, p, c2) - p[c2] * complex_step(lu, p, c1)
                expect = (boost_value(u, p, c2) if a == c1 else 0.0) - (boost_value(u, p, c1) if a == c2 else 0.0)
                note("[L_c, Omega_ab] commutator", _rel(l_om - om_l, expect, l_om, om_l))

        # pointwise null bound |Q_ab| <= (4/t)(|Lu||dw| + |du||Lw|), l1 norms, inside the cone
        inside = p[0] >= np.linalg.norm(p[1:], axis=0) + 1.0
        pk = p[:, inside]
        duk, dwk = u.grad(pk), w.grad(pk)
        lu_n = sum(np.abs(boost_value(u, pk, a)) for a in (1, 2, 3))
        lw_n = sum(np.abs(boost_value(w, pk, a)) for a in (1, 2, 3))
        du_n, dw_n = np.sum(np.abs(duk), axis=0), np.sum(np.abs(dwk), axis=0)
        bound = 4.0 / pk[0] * (lu_n * dw_n + du_n * lw_n)
        for a in range(4):
            for b in range(a + 1, 4):
                ratio = np.max(np.abs(qab(duk, dwk, a, b)) / np.maximum(bound, 1e-300))
                bound_ratio = max(bound_ratio, float(ratio))
        note("pointwise Q_ab null bound (C=4)", max(bound_ratio - 1.0, 0.0))

    return [IdentityResult(k, worst[k], tolerance, counts[k]) for k in worst]


def _cone_points_near(rng: np.random.Generator, centre: np.ndarray, count: int) -> np.ndarray:
    pts = centre[:, None] + rng.normal(scale=1.0, size=(4, count))
    pts[0] = np.maximum(pts[0], np.linalg.norm(pts[1:], axis=0) + 1.0)
    pts[0] = np.maximum(pts[0], 2.0)
    return pts
