"""Pure numpy kernels.

Drop-in equivalent of the compiled extension.  Every public function here has
the same signature and semantics as its twin in ``_native``; the import logic
in ``__init__`` picks whichever is available.  Keep the two in lockstep: the
parity tests compare them on random inputs at tight tolerance.
"""
import numpy as np

_EPS_ANGLE = 1e-8
_EPS_SEG = 1e-12


def skew_many(V):
    """Batched cross-product matrices.  V is (..., 3)."""
    V = np.asarray(V, dtype=np.float64)
    out = np.zeros(V.shape[:-1] + (3, 3))
    x, y, z = V[..., 0], V[..., 1], V[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def rotation_matrices(O):
    """Axis-angle vectors (T, 3) to rotation matrices (T, 3, 3)."""
    O = np.asarray(O, dtype=np.float64)
    T = O.shape[0]
    theta2 = np.einsum("ti,ti->t", O, O)
    theta = np.sqrt(theta2)
    K = skew_many(O)
    K2 = K @ K
    small = theta < _EPS_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        c = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    R = np.broadcast_to(np.eye(3), (T, 3, 3)).copy()
    R += s[:, None, None] * K + c[:, None, None] * K2
    return R


def rotation_derivatives(O, R):
    """Derivatives of R(o) wrt the three axis-angle components.

    Returns (T, 3, 3, 3) where [t, i] is dR/do_i at O[t].  Uses the closed
    form (o_i [o]x + [o x (I - R) e_i]x) / |o|^2 R away from zero and the
    second-order expansion of the exponential map near it.
    """
    O = np.asarray(O, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    T = O.shape[0]
    theta2 = np.einsum("ti,ti->t", O, O)
    small = theta2 < _EPS_ANGLE * _EPS_ANGLE
    K = skew_many(O)
    ImR = np.eye(3) - R
    dR = np.empty((T, 3, 3, 3))
    safe = np.where(small, 1.0, theta2)
    E = [skew_many(np.eye(3)[i]) for i in range(3)]
    for i in range(3):
        v = np.cross(O, ImR[:, :, i])
        N = O[:, i, None, None] * K + skew_many(v)
        exact = (N / safe[:, None, None]) @ R
        approx = E[i] + 0.5 * (E[i] @ K + K @ E[i])
        dR[:, i] = np.where(small[:, None, None], approx, exact)
    return dR


def _axis_rotation(ahat, th):
    """Rotation about a fixed unit axis.  th is (T,), result (T, 3, 3)."""
    c = np.cos(th)
    s = np.sin(th)
    K = skew_many(ahat)
    aat = np.outer(ahat, ahat)
    return (
        c[:, None, None] * np.eye(3)
        + s[:, None, None] * K
        + (1.0 - c)[:, None, None] * aat
    )


def chain_fk(parent, attach, act_index, act_kind, link_dirs, lengths, axes, bw, bl, Q, want_jac=True):
    """Forward kinematics of an actuated link chain over T frames at once.

    parent     (g,)   int, -1 means the link hangs off the body
    attach     (g, 3) body-frame attach coefficients, x and z scale with the
                      body half extents; only read when parent < 0
    act_index  (g,)   int, actuator driving each link or -1
    act_kind   (n,)   int, 0 rotary, 1 linear
    link_dirs  (g, 3) unit direction of each link in its own frame
    lengths    (g,)   link lengths
    axes       (n, 3) raw actuator axis parameters; rotary axes are
                      normalized here so the caller can differentiate
                      through the raw components
    Q          (T, 6 + n) root position, root axis-angle, joint values

    Returns (P, D, JP, JD, R0, dR0) with proximal and distal link points
    (T, g, 3) and their Jacobians (T, g, 3, 6 + n) wrt Q.  JP and JD are
    None when want_jac is false.
    """
    parent = np.asarray(parent, dtype=np.int64)
    attach = np.asarray(attach, dtype=np.float64)
    act_index = np.asarray(act_index, dtype=np.int64)
    act_kind = np.asarray(act_kind, dtype=np.int64)
    link_dirs = np.asarray(link_dirs, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    axes = np.asarray(axes, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(Q, dtype=np.float64)

    T = Q.shape[0]
    g = parent.shape[0]
    n = axes.shape[0]
    nq = 6 + n

    pos = Q[:, 0:3]
    R0 = rotation_matrices(Q[:, 3:6])
    dR0 = rotation_derivatives(Q[:, 3:6], R0)

    P = np.empty((T, g, 3))
    D = np.empty((T, g, 3))
    world_R = np.empty((T, g, 3, 3))
    w_axis = np.zeros((T, n, 3))
    u_vec = np.zeros((T, n, 3))
    pivot = np.zeros((T, n, 3))
    driven = np.full(n, -1, dtype=np.int64)

    for il in range(g):
        par = parent[il]
        if par < 0:
            ab = np.array([attach[il, 0] * bw, attach[il, 1], attach[il, 2] * bl])
            base = pos + np.einsum("tij,j->ti", R0, ab)
            Rp = R0
        else:
            base = D[:, par].copy()
            Rp = world_R[:, par]
        j = act_index[il]
        if j >= 0:
            driven[j] = il
            if act_kind[j] == 1:
                u = np.einsum("tij,j->ti", Rp, axes[j])
                u_vec[:, j] = u
                base = base + Q[:, 6 + j, None] * u
        P[:, il] = base
        if j >= 0 and act_kind[j] == 0:
            na = np.linalg.norm(axes[j])
            ahat = axes[j] / na if na > _EPS_SEG else np.array([1.0, 0.0, 0.0])
            w_axis[:, j] = np.einsum("tij,j->ti", Rp, ahat)
            pivot[:, j] = base
            world_R[:, il] = Rp @ _axis_rotation(ahat, Q[:, 6 + j])
        else:
            world_R[:, il] = Rp
        D[:, il] = P[:, il] + np.einsum("tij,j->ti", world_R[:, il], lengths[il] * link_dirs[il])

    if not want_jac:
        return P, D, None, None, R0, dR0

    JP = np.zeros((T, g, 3, nq))
    JD = np.zeros((T, g, 3, nq))
    JP[:, :, 0, 0] = 1.0
    JP[:, :, 1, 1] = 1.0
    JP[:, :, 2, 2] = 1.0
    JD[:, :, 0, 0] = 1.0
    JD[:, :, 1, 1] = 1.0
    JD[:, :, 2, 2] = 1.0

    # every point is pos + R0 b with b independent of the root orientation,
    # so the orientation columns come straight from dR0
    bP = np.einsum("tji,tgj->tgi", R0, P - pos[:, None, :])
    bD = np.einsum("tji,tgj->tgi", R0, D - pos[:, None, :])
    for k in range(3):
        JP[:, :, :, 3 + k] = np.einsum("tij,tgj->tgi", dR0[:, k], bP)
        JD[:, :, :, 3 + k] = np.einsum("tij,tgj->tgi", dR0[:, k], bD)

    # subtree membership: link il moves with joint j iff driven[j] is il or
    # an ancestor of il
    for j in range(n):
        lj = driven[j]
        if lj < 0:
            continue
        rotary = act_kind[j] == 0
        for il in range(g):
            anc = il
            hit = False
            while anc >= 0:
                if anc == lj:
                    hit = True
                    break
                anc = parent[anc]
            if not hit:
                continue
            if rotary:
                w = w_axis[:, j]
                pv = pivot[:, j]
                if il != lj:
                    JP[:, il, :, 6 + j] = np.cross(w, P[:, il] - pv)
                JD[:, il, :, 6 + j] = np.cross(w, D[:, il] - pv)
            else:
                JP[:, il, :, 6 + j] = u_vec[:, j]
                JD[:, il, :, 6 + j] = u_vec[:, j]

    return P, D, JP, JD, R0, dR0


def segment_closest_points(A, B, C, E):
    """Closest points between segments A-B and C-E, batched over rows.

    Returns (dist, t, u) with the closest points at A + t (B - A) and
    C + u (E - C), parameters clamped to [0, 1].
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)

    d1 = B - A
    d2 = E - C
    r = A - C
    a = np.einsum("ni,ni->n", d1, d1)
    e = np.einsum("ni,ni->n", d2, d2)
    f = np.einsum("ni,ni->n", d2, r)
    c = np.einsum("ni,ni->n", d1, r)
    b = np.einsum("ni,ni->n", d1, d2)

    a_deg = a <= _EPS_SEG
    e_deg = e <= _EPS_SEG
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)

    denom = a * e - b * b
    t = np.where(denom > _EPS_SEG, np.clip((b * f - c * e) / np.where(denom > _EPS_SEG, denom, 1.0), 0.0, 1.0), 0.0)
    u = (b * t + f) / e_safe
    low = u < 0.0
    high = u > 1.0
    t = np.where(low, np.clip(-c / a_safe, 0.0, 1.0), t)
    t = np.where(high, np.clip((b - c) / a_safe, 0.0, 1.0), t)
    u = np.clip(u, 0.0, 1.0)

    t = np.where(a_deg, 0.0, t)
    u = np.where(a_deg, np.clip(f / e_safe, 0.0, 1.0), u)
    u = np.where(e_deg, 0.0, u)
    t = np.where(e_deg & ~a_deg, np.clip(-c / a_safe, 0.0, 1.0), t)

    pa = A + t[:, None] * d1
    pb = C + u[:, None] * d2
    dist = np.linalg.norm(pa - pb, axis=1)
    return dist, t, u
