# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry/integration kernels.

Operation-for-operation twin of `_core_py.py`; keep both files in lockstep
so the backends agree bit-for-bit.
"""

from libc.math cimport atan, cos, fabs, floor, hypot, sin, tan, INFINITY, M_PI

cdef double TWO_PI = 6.283185307179586476925286766559


cdef inline double _wrap(double a) nogil:
    cdef double w = a - TWO_PI * floor((a + M_PI) / TWO_PI)
    if w <= -M_PI:
        w = M_PI
    return w


def wrap_angle(double a):
    """Wrap an angle to (-pi, pi]."""
    return _wrap(a)


cdef inline bint _rect_overlap(double ax, double ay, double ah, double al, double aw,
                               double bx, double by, double bh, double bl, double bw) nogil:
    cdef double fax = cos(ah)
    cdef double fay = sin(ah)
    cdef double fbx = cos(bh)
    cdef double fby = sin(bh)
    cdef double dx = bx - ax
    cdef double dy = by - ay
    cdef double hal = 0.5 * al
    cdef double haw = 0.5 * aw
    cdef double hbl = 0.5 * bl
    cdef double hbw = 0.5 * bw
    cdef double ux, uy, ra, rb
    cdef int k
    for k in range(4):
        if k == 0:
            ux = fax; uy = fay
        elif k == 1:
            ux = -fay; uy = fax
        elif k == 2:
            ux = fbx; uy = fby
        else:
            ux = -fby; uy = fbx
        ra = hal * fabs(ux * fax + uy * fay) + haw * fabs(-ux * fay + uy * fax)
        rb = hbl * fabs(ux * fbx + uy * fby) + hbw * fabs(-ux * fby + uy * fbx)
        if fabs(ux * dx + uy * dy) > ra + rb:
            return False
    return True


def rect_overlap(double ax, double ay, double ah, double al, double aw,
                 double bx, double by, double bh, double bl, double bw):
    """Separating-axis test for two oriented rectangles; touching counts."""
    return _rect_overlap(ax, ay, ah, al, aw, bx, by, bh, bl, bw)


cdef void _corners(double cx, double cy, double h, double length, double width,
                   double* out) nogil:
    cdef double c = cos(h)
    cdef double s = sin(h)
    cdef double hl = 0.5 * length
    cdef double hw = 0.5 * width
    out[0] = cx + hl * c - hw * s
    out[1] = cy + hl * s + hw * c
    out[2] = cx - hl * c - hw * s
    out[3] = cy - hl * s + hw * c
    out[4] = cx - hl * c + hw * s
    out[5] = cy - hl * s - hw * c
    out[6] = cx + hl * c + hw * s
    out[7] = cy + hl * s - hw * c


def rect_corners(double cx, double cy, double h, double length, double width):
    """Corner coordinates (CCW starting front-left) as a flat 8-tuple."""
    cdef double out[8]
    _corners(cx, cy, h, length, width, out)
    return (out[0], out[1], out[2], out[3], out[4], out[5], out[6], out[7])


cdef inline double _point_segment(double px, double py, double x1, double y1,
                                  double x2, double y2,
                                  double* qx, double* qy, double* tt) nogil:
    cdef double vx = x2 - x1
    cdef double vy = y2 - y1
    cdef double vv = vx * vx + vy * vy
    cdef double t
    if vv <= 0.0:
        t = 0.0
    else:
        t = ((px - x1) * vx + (py - y1) * vy) / vv
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx[0] = x1 + t * vx
    qy[0] = y1 + t * vy
    tt[0] = t
    return hypot(px - qx[0], py - qy[0])


def point_segment(double px, double py, double x1, double y1, double x2, double y2):
    """Closest point on segment to (px, py): returns (qx, qy, dist, t)."""
    cdef double qx, qy, t
    cdef double d = _point_segment(px, py, x1, y1, x2, y2, &qx, &qy, &t)
    return qx, qy, d, t


cdef inline double _orient(double ax, double ay, double bx, double by,
                           double cx, double cy) nogil:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


cdef inline bint _segments_intersect(double ax1, double ay1, double ax2, double ay2,
                                     double bx1, double by1, double bx2, double by2) nogil:
    cdef double d1 = _orient(bx1, by1, bx2, by2, ax1, ay1)
    cdef double d2 = _orient(bx1, by1, bx2, by2, ax2, ay2)
    cdef double d3 = _orient(ax1, ay1, ax2, ay2, bx1, by1)
    cdef double d4 = _orient(ax1, ay1, ax2, ay2, bx2, by2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    return False


def segments_intersect(double ax1, double ay1, double ax2, double ay2,
                       double bx1, double by1, double bx2, double by2):
    return _segments_intersect(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2)


cdef double _segment_distance(double ax1, double ay1, double ax2, double ay2,
                              double bx1, double by1, double bx2, double by2) nogil:
    cdef double qx, qy, t, best, d
    if _segments_intersect(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
        return 0.0
    best = _point_segment(ax1, ay1, bx1, by1, bx2, by2, &qx, &qy, &t)
    d = _point_segment(ax2, ay2, bx1, by1, bx2, by2, &qx, &qy, &t)
    if d < best:
        best = d
    d = _point_segment(bx1, by1, ax1, ay1, ax2, ay2, &qx, &qy, &t)
    if d < best:
        best = d
    d = _point_segment(bx2, by2, ax1, ay1, ax2, ay2, &qx, &qy, &t)
    if d < best:
        best = d
    return best


def segment_distance(double ax1, double ay1, double ax2, double ay2,
                     double bx1, double by1, double bx2, double by2):
    return _segment_distance(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2)


def rect_distance(double ax, double ay, double ah, double al, double aw,
                  double bx, double by, double bh, double bl, double bw):
    """Minimal boundary-to-boundary distance; 0 when overlapping."""
    cdef double ca[8]
    cdef double cb[8]
    cdef double best, d
    cdef int i, j, i2, j2
    if _rect_overlap(ax, ay, ah, al, aw, bx, by, bh, bl, bw):
        return 0.0
    _corners(ax, ay, ah, al, aw, ca)
    _corners(bx, by, bh, bl, bw, cb)
    best = INFINITY
    for i in range(4):
        i2 = (i + 1) % 4
        for j in range(4):
            j2 = (j + 1) % 4
            d = _segment_distance(
                ca[2 * i], ca[2 * i + 1], ca[2 * i2], ca[2 * i2 + 1],
                cb[2 * j], cb[2 * j + 1], cb[2 * j2], cb[2 * j2 + 1],
            )
            if d < best:
                best = d
    return best


def point_in_polygon(double[::1] xs, double[::1] ys, double px, double py, double eps):
    """Even-odd point-in-polygon with the boundary counted inside (<= eps)."""
    cdef int n = xs.shape[0]
    cdef bint inside = False
    cdef int i, j
    cdef double x1, y1, x2, y2, xcross, qx, qy, t
    j = n - 1
    for i in range(n):
        x1 = xs[j]
        y1 = ys[j]
        x2 = xs[i]
        y2 = ys[i]
        if _point_segment(px, py, x1, y1, x2, y2, &qx, &qy, &t) <= eps:
            return True
        if (y1 > py) != (y2 > py):
            xcross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xcross:
                inside = not inside
        j = i
    return inside


def polyline_project(double[::1] xs, double[::1] ys, double[::1] cum,
                     double px, double py):
    """Project (px, py) on a polyline: returns (qx, qy, dist, arclen).

    Strict `<` keeps the first (smallest-arclength) minimum on exact ties.
    """
    cdef int n = xs.shape[0]
    cdef double bqx = xs[0]
    cdef double bqy = ys[0]
    cdef double bd = hypot(px - xs[0], py - ys[0])
    cdef double bs = cum[0]
    cdef double qx, qy, d, t
    cdef int i
    for i in range(n - 1):
        d = _point_segment(px, py, xs[i], ys[i], xs[i + 1], ys[i + 1], &qx, &qy, &t)
        if d < bd:
            bd = d
            bqx = qx
            bqy = qy
            bs = cum[i] + t * (cum[i + 1] - cum[i])
    return bqx, bqy, bd, bs


def bicycle_advance(double x, double y, double psi, double v,
                    double acc, double delta, double l_r, double dt):
    """One kinematic bicycle step; slip angle from the 50/50 axle split."""
    cdef double omega = atan(0.5 * tan(delta))
    cdef double nx = x + v * cos(psi + omega) * dt
    cdef double ny = y + v * sin(psi + omega) * dt
    cdef double npsi = _wrap(psi + (v / l_r) * sin(omega) * dt)
    cdef double nv = v + acc * dt
    if nv < 0.0:
        nv = 0.0
    return nx, ny, npsi, nv


def collide_pairs(double[::1] xs, double[::1] ys, double[::1] hs,
                  double[::1] ls, double[::1] ws):
    """All colliding index pairs (i < j) among N oriented rectangles."""
    cdef int n = xs.shape[0]
    cdef list out = []
    cdef int i, j
    cdef double ri, rj, dx, dy
    for i in range(n):
        ri = 0.5 * hypot(ls[i], ws[i])
        for j in range(i + 1, n):
            rj = 0.5 * hypot(ls[j], ws[j])
            dx = xs[j] - xs[i]
            dy = ys[j] - ys[i]
            if dx * dx + dy * dy > (ri + rj) * (ri + rj):
                continue
            if _rect_overlap(xs[i], ys[i], hs[i], ls[i], ws[i],
                             xs[j], ys[j], hs[j], ls[j], ws[j]):
                out.append((i, j))
    return out
