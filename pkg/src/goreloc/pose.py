"""Camera pose from object centres (P3P / PnP) and quadric-based refinement.

The refinement minimises, over the camera pose, the sum of squared
Wasserstein distances between each matched detection ellipse and the
projection of its map quadric, weighted by how strongly the object's
category distribution supports the detection label.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateConfiguration, DivergedBehindCamera, NoInliers, NoSolution
from .geometry import (
    MIN_DEPTH,
    CameraIntrinsics,
    PoseSE3,
    _sqrtm_spd,
    conic_to_ellipse_batch,
    project_points_batch,
    so3_exp,
)
from .semantics import CategorySet, Detection, ObjectLandmark

log = logging.getLogger(__name__)

# squared pixels per unit weight; below this the fit is exact for any
# practical purpose
NEGLIGIBLE_COST = 1e-14


@dataclass(frozen=True)
class Correspondence:
    image_point: tuple
    world_point: tuple

    def __post_init__(self):
        ip = tuple(float(v) for v in self.image_point)
        wp = tuple(float(v) for v in self.world_point)
        if len(ip) != 2 or len(wp) != 3 or not np.all(np.isfinite(ip + wp)):
            raise ValueError("correspondence must be a finite 2D/3D pair")
        object.__setattr__(self, "image_point", ip)
        object.__setattr__(self, "world_point", wp)


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 20
    damping: float = 1e-3
    tolerance: float = 1e-8
    jacobian_step: float = 1e-6
    robust_scale: float | None = None

    def __post_init__(self):
        for name in ("max_iterations", "damping", "tolerance", "jacobian_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.robust_scale is not None and not self.robust_scale > 0:
            raise ValueError("robust_scale must be positive")


# --------------------------------------------------------------------------
# P3P
# --------------------------------------------------------------------------


def bearings(uv, K: CameraIntrinsics):
    uv = np.asarray(uv, dtype=float)
    x = (uv[..., 0] - K.cx) / K.fx
    y = (uv[..., 1] - K.cy) / K.fy
    f = np.stack([x, y, np.ones_like(x)], axis=-1)
    return f / np.linalg.norm(f, axis=-1, keepdims=True)


def _pmul(a, b):
    """Batched product of polynomials stored as ascending coefficients."""
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + b.shape[-1] - 1,))
    for i in range(a.shape[-1]):
        for j in range(b.shape[-1]):
            out[..., i + j] += a[..., i] * b[..., j]
    return out


def _padd(a, b):
    n = max(a.shape[-1], b.shape[-1])
    out = np.zeros(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (n,))
    out[..., : a.shape[-1]] += a
    out[..., : b.shape[-1]] += b
    return out


def _quartic_roots(coef):
    """Roots of batched polynomials (ascending coefficients, degree <= 4).

    Returns a complex ``(B, 4)`` array padded with ``nan``.
    """
    B = coef.shape[0]
    scale = np.max(np.abs(coef), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    c = coef / scale
    roots = np.full((B, 4), np.nan + 0j)
    full = np.abs(c[:, 4]) > 1e-10
    if np.any(full):
        cf = c[full]
        comp = np.zeros((len(cf), 4, 4))
        comp[:, 1:, :3] = np.eye(3)
        comp[:, :, 3] = -cf[:, :4] / cf[:, 4:5]
        roots[full] = np.linalg.eigvals(comp)
    for b in np.flatnonzero(~full):
        r = np.roots(c[b, ::-1])
        roots[b, : len(r)] = r
    return roots


def p3p_batch(f, X):
    """All P3P solutions for a batch of minimal problems.

    ``f`` holds unit bearing vectors ``(B, 3, 3)`` and ``X`` world points
    ``(B, 3, 3)``. Returns ``(R, t, owner)`` stacks where ``owner[k]`` is the
    problem index of solution ``k``; solutions of one problem are ordered by
    the real root they come from.
    """
    f = np.asarray(f, dtype=float)
    X = np.asarray(X, dtype=float)
    B = f.shape[0]
    a2 = np.sum((X[:, 1] - X[:, 2]) ** 2, axis=1)
    b2 = np.sum((X[:, 0] - X[:, 2]) ** 2, axis=1)
    c2 = np.sum((X[:, 0] - X[:, 1]) ** 2, axis=1)
    ca = np.sum(f[:, 1] * f[:, 2], axis=1)
    cb = np.sum(f[:, 0] * f[:, 2], axis=1)
    cg = np.sum(f[:, 0] * f[:, 1], axis=1)

    # depths s2 = u*s1, s3 = v*s1; both conditions are quadratics in u:
    #   p(u) = b2 u^2 - 2 b2 cg u + p0(v)       = 0
    #   q(u) = b2 u^2 - 2 b2 ca v u + q0(v)     = 0
    # and their resultant in u is a quartic in v.
    one_v = np.stack([np.ones(B), -2 * cb, np.ones(B)], axis=1)  # 1 - 2 v cb + v^2
    p0 = _padd(b2[:, None] * np.array([1.0, 0.0, 0.0]), -c2[:, None] * one_v)
    q0 = _padd(b2[:, None] * np.array([0.0, 0.0, 1.0]), -a2[:, None] * one_v)
    p1 = (-2 * cg)[:, None]  # divided by b2
    q1 = np.stack([np.zeros(B), -2 * ca], axis=1)  # divided by b2
    A = (q0 - p0) / b2[:, None]
    Bq = _padd(q1, -p1)
    Cq = _padd(_pmul(p1, q0 / b2[:, None]), -_pmul(p0 / b2[:, None], q1))
    quartic = _padd(_pmul(A, A), -_pmul(Bq, Cq))

    roots = _quartic_roots(quartic)
    rr = roots.real
    tol = 1e-6 * (1 + np.abs(rr))
    real = np.isfinite(rr) & (np.abs(roots.imag) <= tol)
    rr = np.where(real, rr, 0.0)
    # Newton polish of real roots
    d = np.arange(1, quartic.shape[1]) * quartic[:, 1:]
    for _ in range(3):
        pv = np.sum(quartic[:, None, :] * rr[..., None] ** np.arange(quartic.shape[1]), axis=-1)
        dv = np.sum(d[:, None, :] * rr[..., None] ** np.arange(d.shape[1]), axis=-1)
        step = np.divide(pv, dv, out=np.zeros_like(pv), where=np.abs(dv) > 1e-300)
        rr = rr - np.where(real, step, 0.0)

    v = rr
    A_v = np.sum(A[:, None, :] * v[..., None] ** np.arange(3), axis=-1)
    B_v = Bq[:, :1] + Bq[:, 1:2] * v
    with np.errstate(divide="ignore", invalid="ignore"):
        u = -A_v / B_v
        s1 = np.sqrt(b2[:, None] / (1 + v * v - 2 * v * cb[:, None]))
    ok = real & (v > 0) & np.isfinite(u) & (u > 0) & np.isfinite(s1) & (np.abs(B_v) > 1e-12)

    owner, which = np.nonzero(ok)
    if len(owner) == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), owner
    depths = np.stack([s1[owner, which], (u * s1)[owner, which], (v * s1)[owner, which]], axis=1)
    Y = f[owner] * depths[..., None]
    # reject solutions that fail the third (unused) distance constraint
    c_err = np.abs(np.sum((Y[:, 0] - Y[:, 1]) ** 2, axis=1) - c2[owner])
    keep = c_err <= 1e-6 * np.maximum(c2[owner], 1e-300) + 1e-12
    owner, Y = owner[keep], Y[keep]
    R, t = kabsch_batch(X[owner], Y)
    return R, t, owner


def kabsch_batch(X, Y):
    """Rigid ``(R, t)`` with ``Y ≈ R X + t`` for stacked point sets ``(B, n, 3)``."""
    Xm = X.mean(axis=1, keepdims=True)
    Ym = Y.mean(axis=1, keepdims=True)
    H = np.swapaxes(X - Xm, 1, 2) @ (Y - Ym)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    det = np.linalg.det(V @ np.swapaxes(U, 1, 2))
    D = np.zeros_like(H)
    D[:, 0, 0] = 1
    D[:, 1, 1] = 1
    D[:, 2, 2] = np.sign(det)
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = Ym[:, 0] - np.einsum("bij,bj->bi", R, Xm[:, 0])
    return R, t


# --------------------------------------------------------------------------
# PnP
# --------------------------------------------------------------------------


def _check_configuration(X):
    if len(X) < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {len(X)}")
    sv = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    if sv[0] < 1e-12 or sv[1] <= 1e-8 * sv[0]:
        raise DegenerateConfiguration("world points are coincident or collinear")


def reprojection_errors(R, t, K, uv, X):
    proj, z = project_points_batch(R, t, K, X)
    err = np.linalg.norm(proj - uv, axis=-1)
    return np.where(z > MIN_DEPTH, err, np.inf)


def polish_pose(R, t, K: CameraIntrinsics, uv, X, iterations=20):
    """Gauss-Newton on pixel reprojection error over all correspondences."""
    f = np.array([K.fx, K.fy])
    cost = np.sum(reprojection_errors(R, t, K, uv, X) ** 2)
    for _ in range(iterations):
        Xc = X @ R.T + t
        z = Xc[:, 2]
        if np.any(z <= MIN_DEPTH):
            break
        proj = f * Xc[:, :2] / z[:, None] + [K.cx, K.cy]
        r = (proj - uv).ravel()
        dp = np.zeros((len(X), 2, 3))
        dp[:, 0, 0] = K.fx / z
        dp[:, 1, 1] = K.fy / z
        dp[:, :, 2] = -f * Xc[:, :2] / (z * z)[:, None]
        dX = np.zeros((len(X), 3, 6))
        dX[:, 0, 1], dX[:, 0, 2] = Xc[:, 2], -Xc[:, 1]
        dX[:, 1, 0], dX[:, 1, 2] = -Xc[:, 2], Xc[:, 0]
        dX[:, 2, 0], dX[:, 2, 1] = Xc[:, 1], -Xc[:, 0]
        dX[:, :, 3:] = np.eye(3)
        J = (dp @ dX).reshape(-1, 6)
        try:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        dR = so3_exp(delta[:3])
        R_new, t_new = dR @ R, dR @ t + delta[3:]
        new_cost = np.sum(reprojection_errors(R_new, t_new, K, uv, X) ** 2)
        if not new_cost <= cost:
            break
        R, t, cost = R_new, t_new, new_cost
        if np.linalg.norm(delta) < 1e-14:
            break
    return R, t


def pnp_from_centers(corrs: Sequence[Correspondence], K: CameraIntrinsics, max_triples=10) -> list[PoseSE3]:
    """Poses mapping world points onto their image points.

    Three correspondences give every P3P solution. With more, P3P runs on the
    best-spread triples, the hypothesis with lowest total reprojection error
    is kept and polished by Gauss-Newton over all points.
    """
    uv = np.array([c.image_point for c in corrs], dtype=float).reshape(-1, 2)
    X = np.array([c.world_point for c in corrs], dtype=float).reshape(-1, 3)
    _check_configuration(X)
    f = bearings(uv, K)
    if len(X) == 3:
        R, t, _ = p3p_batch(f[None], X[None])
        if len(R) == 0:
            raise NoSolution("P3P has no real solution")
        return [PoseSE3(r, tt) for r, tt in zip(R, t)]

    triples = list(itertools.combinations(range(len(X)), 3))
    area = [np.linalg.norm(np.cross(X[j] - X[i], X[k] - X[i])) for i, j, k in triples]
    order = sorted(range(len(triples)), key=lambda n: -area[n])[:max_triples]
    idx = np.array([triples[n] for n in order])
    R, t, _ = p3p_batch(f[idx], X[idx])
    if len(R) == 0:
        raise NoSolution("P3P has no real solution on any support triple")
    costs = [np.sum(reprojection_errors(r, tt, K, uv, X) ** 2) for r, tt in zip(R, t)]
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        raise NoSolution("no hypothesis places all points in front of the camera")
    Rb, tb = polish_pose(R[best], t[best], K, uv, X)
    return [PoseSE3(Rb, tb)]


# --------------------------------------------------------------------------
# refinement
# --------------------------------------------------------------------------


@dataclass
class RefinementResult:
    pose: PoseSE3
    initial_cost: float
    final_cost: float
    iterations: int
    cost_history: list = field(default_factory=list)
    dropped: int = 0


class EllipseAlignmentCost:
    """Weighted squared W2 distance between detection ellipses and projected
    quadrics, as a function of the camera pose.

    Each match contributes a 6-vector residual ``sqrt(w) * [dmu, vec(D)]``
    where ``dmu`` is the centre offset and ``D`` the transport-map term of
    the covariance part, so that its squared norm is ``w * W2^2`` and the
    residual stays smooth where the distance vanishes.

    With ``box_aligned`` (default) the projected ellipse is first replaced by
    the ellipse inscribed in its bounding box, which is what a detection box
    can express; the full projected covariance is used otherwise.
    """

    def __init__(self, det_centers, det_covs, quadrics, weights, K: CameraIntrinsics, box_aligned=True):
        self.det_centers = np.asarray(det_centers, dtype=float).reshape(-1, 2)
        det_covs = np.asarray(det_covs, dtype=float).reshape(-1, 2, 2)
        self.root, self.inv_root = _sqrtm_spd(det_covs)
        self.Q = np.asarray(quadrics, dtype=float).reshape(-1, 4, 4)
        self.weights = np.asarray(weights, dtype=float)
        self.sqrt_w = np.sqrt(self.weights)
        self.K = K
        self.box_aligned = box_aligned

    def __len__(self):
        return len(self.weights)

    def subset(self, mask):
        out = object.__new__(EllipseAlignmentCost)
        out.det_centers = self.det_centers[mask]
        out.root, out.inv_root = self.root[mask], self.inv_root[mask]
        out.Q = self.Q[mask]
        out.weights = self.weights[mask]
        out.sqrt_w = self.sqrt_w[mask]
        out.K = self.K
        out.box_aligned = self.box_aligned
        return out

    def residuals(self, R, t):
        """``(residuals (n, 6), valid (n,))`` at pose ``(R, t)``."""
        r, ok = self.residuals_batch(np.asarray(R)[None], np.asarray(t)[None])
        return r[0], ok[0]

    def residuals_batch(self, R, t):
        """Residuals ``(B, n, 6)`` and validity ``(B, n)`` for poses ``(B, 3, 3)``, ``(B, 3)``."""
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        P = self.K.matrix @ np.concatenate([R, t[:, :, None]], axis=2)
        Cstar = np.einsum("bij,njk,blk->bnil", P, self.Q, P)
        centers3 = self.Q[:, :3, 3] / -self.Q[:, 3:4, 3]
        depth = centers3 @ R[:, 2].T + t[:, 2]
        mu, S, ok = conic_to_ellipse_batch(Cstar)
        ok = ok & (depth.T > MIN_DEPTH)
        S = np.where(ok[..., None, None], S, np.eye(2))
        if self.box_aligned:
            S = S * np.eye(2)
        M = self.root @ S @ self.root
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
        rootM, _ = _sqrtm_spd(M)
        D = self.root - self.inv_root @ rootM
        r = np.concatenate([mu - self.det_centers, D.reshape(*D.shape[:2], 4)], axis=-1)
        return self.sqrt_w[:, None] * r, ok

    def w2_sq(self, R, t):
        r, ok = self.residuals(R, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.weights > 0, np.sum(r * r, axis=1) / self.weights, 0.0), ok

    def cost(self, R, t):
        r, ok = self.residuals(R, t)
        if not np.all(ok):
            return np.inf
        return float(np.sum(r * r))

    def jacobian(self, R, t, step=1e-6):
        """Central-difference Jacobian of the flattened residuals w.r.t. the
        left increment ``(omega, v)``: ``R <- exp(omega) R, t <- exp(omega) t + v``."""
        deltas = np.concatenate([np.eye(6), -np.eye(6)]) * step
        Rs, ts = zip(*(retract(R, t, d) for d in deltas))
        r, _ = self.residuals_batch(np.stack(Rs), np.stack(ts))
        return (r[:6] - r[6:]).reshape(6, -1).T / (2 * step)

    def gradient(self, R, t, step=1e-6):
        r, _ = self.residuals(R, t)
        return 2.0 * self.jacobian(R, t, step).T @ r.ravel()


def retract(R, t, delta):
    dR = so3_exp(delta[:3])
    return dR @ R, dR @ t + delta[3:]


def _robust(cost_terms, scale):
    """Huber on per-match W2: returns (total cost, per-match residual scale)."""
    if scale is None:
        return float(np.sum(cost_terms)), np.ones_like(cost_terms)
    r = np.sqrt(cost_terms)
    inside = r <= scale
    rho = np.where(inside, cost_terms, 2 * scale * r - scale**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(inside, 1.0, np.sqrt(scale / r))
    return float(np.sum(rho)), s


def optimize_pose(problem: EllipseAlignmentCost, T0: PoseSE3, cfg: RefinementConfig) -> RefinementResult:
    """Levenberg-Marquardt over the 6-DoF pose with Marquardt (diagonal)
    damping; rejected steps raise the damping tenfold, accepted ones lower it."""
    R, t = np.array(T0.rotation), np.array(T0.translation)
    _, ok = problem.residuals(R, t)
    dropped = int(np.sum(~ok))
    if dropped:
        log.warning("dropping %d matches whose quadric is behind the camera", dropped)
        problem = problem.subset(ok)
        if len(problem) == 0:
            raise DivergedBehindCamera("every matched quadric is behind the camera")

    def evaluate(R, t):
        r, ok = problem.residuals(R, t)
        if not np.all(ok):
            return np.inf, r, None
        cost, s = _robust(np.sum(r * r, axis=1), cfg.robust_scale)
        return cost, r, s

    cost, r, s = evaluate(R, t)
    initial = cost
    history = [cost]
    lam = cfg.damping
    it = 0
    floor = NEGLIGIBLE_COST * float(np.sum(problem.weights))
    if cost < floor or np.all(problem.weights == 0):
        return RefinementResult(T0, initial, cost, 0, history, dropped)
    while it < cfg.max_iterations:
        it += 1
        J = problem.jacobian(R, t, cfg.jacobian_step)
        if cfg.robust_scale is not None:
            J = J * np.repeat(s, 6)[:, None]
            rv = (r * s[:, None]).ravel()
        else:
            rv = r.ravel()
        H = J.T @ J
        g = J.T @ rv
        diag = np.diag(H) + 1e-12 * max(np.max(np.diag(H)), 1e-300)
        improved = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            Rn, tn = retract(R, t, delta)
            new_cost, rn, sn = evaluate(Rn, tn)
            if new_cost < cost:
                improved = True
                break
            lam *= 10
        if not improved:
            break
        decrease = cost - new_cost
        R, t, cost, r, s = Rn, tn, new_cost, rn, sn
        history.append(cost)
        lam = max(lam / 10, 1e-12)
        if decrease <= cfg.tolerance * history[-2] or cost < floor:
            break
    return RefinementResult(PoseSE3(R, t), initial, cost, it, history, dropped)


def build_alignment_cost(
    matches: Iterable,
    objects,
    dets: Sequence[Detection],
    K: CameraIntrinsics,
    cats: CategorySet,
    box_aligned=True,
) -> EllipseAlignmentCost:
    """Collect inlier matches into an :class:`EllipseAlignmentCost`.

    ``objects`` is a sequence of landmarks or a mapping from id to landmark;
    match frame ids index ``dets``.
    """
    by_id = objects if isinstance(objects, dict) else {o.id: o for o in objects}
    centers, covs, quads, weights = [], [], [], []
    for m in matches:
        if not m.inlier:
            continue
        det = dets[m.frame_id]
        obj: ObjectLandmark = by_id[m.map_id]
        centers.append(det.ellipse.center)
        covs.append(det.ellipse.covariance)
        quads.append(obj.quadric.matrix())
        weights.append(obj.distribution[cats.index(det.label)])
    if not weights:
        raise NoInliers("no inlier matches to refine over")
    return EllipseAlignmentCost(centers, covs, quads, weights, K, box_aligned)


def refine_pose(
    matches: Iterable,
    objects,
    dets: Sequence[Detection],
    T0: PoseSE3,
    K: CameraIntrinsics,
    cats: CategorySet,
    cfg: RefinementConfig | None = None,
    box_aligned=True,
) -> PoseSE3:
    cfg = cfg or RefinementConfig()
    problem = build_alignment_cost(matches, objects, dets, K, cats, box_aligned)
    return optimize_pose(problem, T0, cfg).pose
