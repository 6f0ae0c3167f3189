"""Pure-Python twin of the compiled geometry/integration kernels.

Every function here mirrors `_core.pyx` operation for operation so both
backends produce the same floating-point results. Keep the two files in
lockstep: any change to one must be transcribed to the other.
"""

import math

TWO_PI = 6.283185307179586476925286766559


def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    w = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if w <= -math.pi:
        w = math.pi
    return w


def rect_overlap(ax, ay, ah, al, aw, bx, by, bh, bl, bw):
    """Separating-axis test for two oriented rectangles; touching counts."""
    fax = math.cos(ah)
    fay = math.sin(ah)
    fbx = math.cos(bh)
    fby = math.sin(bh)
    dx = bx - ax
    dy = by - ay
    hal = 0.5 * al
    haw = 0.5 * aw
    hbl = 0.5 * bl
    hbw = 0.5 * bw
    # Candidate axes: facing + normal of each rectangle (4 total).
    axes = (
        (fax, fay),
        (-fay, fax),
        (fbx, fby),
        (-fby, fbx),
    )
    for ux, uy in axes:
        ra = hal * abs(ux * fax + uy * fay) + haw * abs(-ux * fay + uy * fax)
        rb = hbl * abs(ux * fbx + uy * fby) + hbw * abs(-ux * fby + uy * fbx)
        if abs(ux * dx + uy * dy) > ra + rb:
            return False
    return True


def rect_corners(cx, cy, h, length, width):
    """Corner coordinates (CCW starting front-left) as a flat 8-tuple."""
    c = math.cos(h)
    s = math.sin(h)
    hl = 0.5 * length
    hw = 0.5 * width
    return (
        cx + hl * c - hw * s,
        cy + hl * s + hw * c,
        cx - hl * c - hw * s,
        cy - hl * s + hw * c,
        cx - hl * c + hw * s,
        cy - hl * s - hw * c,
        cx + hl * c + hw * s,
        cy + hl * s - hw * c,
    )


def point_segment(px, py, x1, y1, x2, y2):
    """Closest point on segment to (px, py): returns (qx, qy, dist, t)."""
    vx = x2 - x1
    vy = y2 - y1
    vv = vx * vx + vy * vy
    if vv <= 0.0:
        t = 0.0
    else:
        t = ((px - x1) * vx + (py - y1) * vy) / vv
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = x1 + t * vx
    qy = y1 + t * vy
    return qx, qy, math.hypot(px - qx, py - qy), t


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    d1 = _orient(bx1, by1, bx2, by2, ax1, ay1)
    d2 = _orient(bx1, by1, bx2, by2, ax2, ay2)
    d3 = _orient(ax1, ay1, ax2, ay2, bx1, by1)
    d4 = _orient(ax1, ay1, ax2, ay2, bx2, by2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    return False


def segment_distance(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    if segments_intersect(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
        return 0.0
    best = point_segment(ax1, ay1, bx1, by1, bx2, by2)[2]
    d = point_segment(ax2, ay2, bx1, by1, bx2, by2)[2]
    if d < best:
        best = d
    d = point_segment(bx1, by1, ax1, ay1, ax2, ay2)[2]
    if d < best:
        best = d
    d = point_segment(bx2, by2, ax1, ay1, ax2, ay2)[2]
    if d < best:
        best = d
    return best


def rect_distance(ax, ay, ah, al, aw, bx, by, bh, bl, bw):
    """Minimal boundary-to-boundary distance; 0 when overlapping."""
    if rect_overlap(ax, ay, ah, al, aw, bx, by, bh, bl, bw):
        return 0.0
    ca = rect_corners(ax, ay, ah, al, aw)
    cb = rect_corners(bx, by, bh, bl, bw)
    best = math.inf
    for i in range(4):
        i2 = (i + 1) % 4
        for j in range(4):
            j2 = (j + 1) % 4
            d = segment_distance(
                ca[2 * i], ca[2 * i + 1], ca[2 * i2], ca[2 * i2 + 1],
                cb[2 * j], cb[2 * j + 1], cb[2 * j2], cb[2 * j2 + 1],
            )
            if d < best:
                best = d
    return best


def point_in_polygon(xs, ys, px, py, eps):
    """Even-odd point-in-polygon with the boundary counted inside (<= eps)."""
    n = len(xs)
    inside = False
    j = n - 1
    for i in range(n):
        x1 = xs[j]
        y1 = ys[j]
        x2 = xs[i]
        y2 = ys[i]
        if point_segment(px, py, x1, y1, x2, y2)[2] <= eps:
            return True
        if (y1 > py) != (y2 > py):
            xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xcross:
                inside = not inside
        j = i
    return inside


def polyline_project(xs, ys, cum, px, py):
    """Project (px, py) on a polyline: returns (qx, qy, dist, arclen).

    Strict `<` keeps the first (smallest-arclength) minimum on exact ties.
    """
    n = len(xs)
    bqx = xs[0]
    bqy = ys[0]
    bd = math.hypot(px - xs[0], py - ys[0])
    bs = cum[0]
    for i in range(n - 1):
        qx, qy, d, t = point_segment(px, py, xs[i], ys[i], xs[i + 1], ys[i + 1])
        if d < bd:
            bd = d
            bqx = qx
            bqy = qy
            bs = cum[i] + t * (cum[i + 1] - cum[i])
    return bqx, bqy, bd, bs


def bicycle_advance(x, y, psi, v, acc, delta, l_r, dt):
    """One kinematic bicycle step; slip angle from the 50/50 axle split."""
    omega = math.atan(0.5 * math.tan(delta))
    nx = x + v * math.cos(psi + omega) * dt
    ny = y + v * math.sin(psi + omega) * dt
    npsi = wrap_angle(psi + (v / l_r) * math.sin(omega) * dt)
    nv = v + acc * dt
    if nv < 0.0:
        nv = 0.0
    return nx, ny, npsi, nv


def collide_pairs(xs, ys, hs, ls, ws):
    """All colliding index pairs (i < j) among N oriented rectangles."""
    n = len(xs)
    out = []
    for i in range(n):
        ri = 0.5 * math.hypot(ls[i], ws[i])
        for j in range(i + 1, n):
            rj = 0.5 * math.hypot(ls[j], ws[j])
            dx = xs[j] - xs[i]
            dy = ys[j] - ys[i]
            if dx * dx + dy * dy > (ri + rj) * (ri + rj):
                continue
            if rect_overlap(
                xs[i], ys[i], hs[i], ls[i], ws[i],
                xs[j], ys[j], hs[j], ls[j], ws[j],
            ):
                out.append((i, j))
    return out
