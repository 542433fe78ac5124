# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled engine kernels: Dormand-Prince 5(4) stepping of the conformal
characteristic flow and of the linearized frame system.

Twin of ``_pyref``: same tableau, same error control, same dense-output
layout, same renormalization policy.  Status codes: 0 reached, 1 escaped,
2 max_steps.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, isfinite, pow, sin, sqrt

cnp.import_array()

cdef int KIND_EUCLIDEAN = 0
cdef int KIND_SPHERE = 1
cdef int KIND_PERTURBED = 2
cdef int BUMP_GAUSSIAN = 0
cdef int BUMP_COSINE = 1

DEF MAXD = 64          # max ODE dimension (n <= 5 covers flow and frames)
DEF MAXN = 5

cdef double[6] DP_C = [0.0, 0.2, 0.3, 0.8, 0.8888888888888888, 1.0]
cdef double[6][5] DP_A = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0],
    [0.075, 0.225, 0.0, 0.0, 0.0],
    [0.9777777777777777, -3.7333333333333334, 3.5555555555555554, 0.0, 0.0],
    [2.9525986892242035, -11.595793324188385, 9.822892851699436,
     -0.2908093278463649, 0.0],
    [2.8462752525252526, -10.757575757575758, 8.906422717743473,
     0.2784090909090909, -0.2735313036020583],
]
cdef double[6] DP_B = [0.09114583333333333, 0.0, 0.44923629829290207,
                       0.6510416666666666, -0.322376179245283,
                       0.13095238095238096]
cdef double[7] DP_E = [-0.0012326388888888888, 0.0, 0.0042527702905061394,
                       -0.03697916666666667, 0.05086379716981132,
                       -0.0419047619047619, 0.025]
cdef double[7][4] DP_P = [
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
    [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
]

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0


# ---------------------------------------------------------------- conformal

cdef void conf_cgh(const double[::1] params, double* y, int n,
                   double* c_out, double* gc, double* hc) noexcept:
    """c(y), grad c, hess c (row-major n*n)."""
    cdef int kind = <int> params[0]
    cdef double eps = params[2]
    cdef int nbumps = <int> params[3]
    cdef int i, j, b, off
    cdef double s, c0, pv, w, q, e, ph, width, amp
    cdef double g0[MAXN]
    cdef double pg[MAXN]
    cdef double r[MAXN]
    cdef double h0[MAXN * MAXN]
    cdef double phh[MAXN * MAXN]

    if kind == KIND_EUCLIDEAN:
        c_out[0] = 1.0
        for i in range(n):
            gc[i] = 0.0
            for j in range(n):
                hc[i * n + j] = 0.0
        return

    s = 0.0
    for i in range(n):
        s += y[i] * y[i]
    c0 = 0.25 * (1.0 + s) * (1.0 + s)
    for i in range(n):
        g0[i] = (1.0 + s) * y[i]
        for j in range(n):
            h0[i * n + j] = 2.0 * y[i] * y[j]
        h0[i * n + i] += (1.0 + s)

    if kind == KIND_SPHERE:
        c_out[0] = c0
        for i in range(n):
            gc[i] = g0[i]
            for j in range(n):
                hc[i * n + j] = h0[i * n + j]
        return

    # perturbed: phi value/grad/hess then chain rule through exp(-2 eps phi)
    pv = 0.0
    for i in range(n):
        pg[i] = 0.0
        for j in range(n):
            phh[i * n + j] = 0.0
    off = 4
    for b in range(nbumps):
        amp = params[off + 1]
        width = params[off + 2]
        if (<int> params[off]) == BUMP_GAUSSIAN:
            q = 0.0
            for i in range(n):
                r[i] = y[i] - params[off + 3 + i]
                q += r[i] * r[i]
            q /= 2.0 * width * width
            e = amp * exp(-q)
            pv += e
            for i in range(n):
                pg[i] += e * (-r[i] / (width * width))
                for j in range(n):
                    phh[i * n + j] += e * (r[i] * r[j] / (width * width * width * width))
                phh[i * n + i] += e * (-1.0 / (width * width))
        else:  # cosine
            ph = width
            for i in range(n):
                ph += params[off + 3 + i] * y[i]
            pv += amp * cos(ph)
            for i in range(n):
                pg[i] += -amp * sin(ph) * params[off + 3 + i]
                for j in range(n):
                    phh[i * n + j] += -amp * cos(ph) * params[off + 3 + i] * params[off + 3 + j]
        off += 3 + n

    w = exp(-2.0 * eps * pv)
    c_out[0] = w * c0
    for i in range(n):
        gc[i] = w * (g0[i] - 2.0 * eps * c0 * pg[i])
    for i in range(n):
        for j in range(n):
            hc[i * n + j] = w * (h0[i * n + j]
                                 - 2.0 * eps * (g0[i] * pg[j] + pg[i] * g0[j])
                                 - 2.0 * eps * c0 * phh[i * n + j]
                                 + 4.0 * eps * eps * c0 * pg[i] * pg[j])


cdef void flow_rhs(const double[::1] params, double level, int n,
                   double* y, double* out) noexcept:
    cdef double c
    cdef double gc[MAXN]
    cdef double hc[MAXN * MAXN]
    cdef double pp = 0.0
    cdef int i
    conf_cgh(params, y, n, &c, gc, hc)
    for i in range(n):
        pp += y[n + i] * y[n + i]
    for i in range(n):
        out[i] = c * y[n + i]
        out[n + i] = -0.5 * pp * gc[i]
    out[2 * n] = 0.5 * c * pp + level


cdef void dense_eval(const double[::1] ts, const double[:, ::1] ys,
                     const double[:, :, ::1] coef, double direction,
                     double t, double* out, int d) noexcept:
    cdef int m = ts.shape[0] - 1
    cdef int lo, hi, mid, idx, i
    cdef double td, h, th, t2, t3, t4
    if m <= 0:
        for i in range(d):
            out[i] = ys[0, i]
        return
    td = t * direction
    lo = 0
    hi = m + 1
    while lo < hi:
        mid = (lo + hi) // 2
        if ts[mid] * direction <= td:
            lo = mid + 1
        else:
            hi = mid
    idx = lo - 1
    if idx < 0:
        idx = 0
    if idx > m - 1:
        idx = m - 1
    h = ts[idx + 1] - ts[idx]
    th = (t - ts[idx]) / h
    if th < 0.0:
        th = 0.0
    if th > 1.0:
        th = 1.0
    t2 = th * th
    t3 = t2 * th
    t4 = t3 * th
    for i in range(d):
        out[i] = (ys[idx, i] + coef[idx, i, 0] * th + coef[idx, i, 1] * t2
                  + coef[idx, i, 2] * t3 + coef[idx, i, 3] * t4)


cdef void frame_rhs(const double[::1] params, int n, int k,
                    double* base, double* y, double* out) noexcept:
    """Columns (h, v): h' = (gc.h) p + c v ; v' = -0.5|p|^2 Hc h - (p.v) gc."""
    cdef double c
    cdef double gc[MAXN]
    cdef double hc[MAXN * MAXN]
    cdef double pp = 0.0
    cdef double gch, pv, acc
    cdef int i, j, col
    conf_cgh(params, base, n, &c, gc, hc)
    for i in range(n):
        pp += base[n + i] * base[n + i]
    for col in range(k):
        gch = 0.0
        pv = 0.0
        for i in range(n):
            gch += gc[i] * y[i * k + col]
            pv += base[n + i] * y[(n + i) * k + col]
        for i in range(n):
            out[i * k + col] = base[n + i] * gch + c * y[(n + i) * k + col]
            acc = 0.0
            for j in range(n):
                acc += hc[i * n + j] * y[j * k + col]
            out[(n + i) * k + col] = -0.5 * pp * acc - gc[i] * pv


# ------------------------------------------------------------------ stepper

cdef double _rms_scaled(double* x, double* sc, int d) noexcept:
    cdef double acc = 0.0
    cdef int i
    for i in range(d):
        acc += (x[i] / sc[i]) * (x[i] / sc[i])
    return sqrt(acc / d)


cdef class _Ctx:
    """RHS context: mode 0 = flow, mode 1 = frame along a dense base."""
    cdef const double[::1] params
    cdef double level
    cdef int mode, n, k, d
    cdef const double[::1] b_ts
    cdef const double[:, ::1] b_ys
    cdef const double[:, :, ::1] b_coef
    cdef double b_dir
    cdef double base_buf[2 * MAXN + 1]

    cdef void call(self, double t, double* y, double* out) noexcept:
        if self.mode == 0:
            flow_rhs(self.params, self.level, self.n, y, out)
        else:
            dense_eval(self.b_ts, self.b_ys, self.b_coef, self.b_dir, t,
                       self.base_buf, 2 * self.n + 1)
            frame_rhs(self.params, self.n, self.k, self.base_buf, y, out)


cdef double _initial_step(_Ctx ctx, double t0, double* y0, double* f0,
                          double direction, double rtol, double atol,
                          double max_step, int d, int* nfev) noexcept:
    cdef double sc[MAXD]
    cdef double y1[MAXD]
    cdef double f1[MAXD]
    cdef double diff[MAXD]
    cdef double d0, d1, d2, h0, h1
    cdef int i
    for i in range(d):
        sc[i] = atol + rtol * fabs(y0[i])
    d0 = _rms_scaled(y0, sc, d)
    d1 = _rms_scaled(f0, sc, d)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    for i in range(d):
        y1[i] = y0[i] + h0 * direction * f0[i]
    ctx.call(t0 + h0 * direction, y1, f1)
    nfev[0] += 1
    for i in range(d):
        diff[i] = f1[i] - f0[i]
    d2 = _rms_scaled(diff, sc, d) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = 1e-6 if 1e-6 > h0 * 1e-3 else h0 * 1e-3
    else:
        h1 = pow(0.01 / (d1 if d1 > d2 else d2), 0.2)
    h0 = 100 * h0
    if h1 < h0:
        h0 = h1
    if max_step < h0:
        h0 = max_step
    return h0


cdef _integrate(_Ctx ctx, double t0, cnp.ndarray y0_arr, double t1,
                double rtol, double atol, double max_step, long max_steps,
                double escape_norm, double renorm_ratio,
                list tf_times, list tf_mats, double[:, ::1] cum):
    cdef int d = ctx.d
    cdef double K[7][MAXD]
    cdef double y[MAXD]
    cdef double y_new[MAXD]
    cdef double dy[MAXD]
    cdef double err[MAXD]
    cdef double sc[MAXD]
    cdef double t = t0, h, h_abs, direction, e, factor, min_h, mx
    cdef int i, j, s, status, bad, step_ok
    cdef long accepted = 0
    cdef int nfev = 0
    cdef double[::1] y0v = y0_arr

    ts_list = [t0]
    ys_list = [y0_arr.copy()]
    coef_list = []

    if t1 == t0:
        return (np.array(ts_list), np.array(ys_list),
                np.empty((0, d, 4)), 0, 0)
    direction = 1.0 if t1 > t0 else -1.0

    for i in range(d):
        y[i] = y0v[i]
    ctx.call(t, y, K[0])
    nfev += 1
    for i in range(d):
        if not isfinite(K[0][i]):
            return (np.array(ts_list), np.array(ys_list),
                    np.empty((0, d, 4)), 1, nfev)
    h_abs = _initial_step(ctx, t, y, K[0], direction, rtol, atol,
                          max_step, d, &nfev)

    status = 2
    coef_np = None
    while accepted < max_steps:
        if direction * (t - t1) >= 0:
            status = 0
            break
        if h_abs > fabs(t1 - t):
            h_abs = fabs(t1 - t)
        min_h = 16 * 2.220446049250313e-16 * (1.0 if fabs(t) < 1.0 else fabs(t))
        step_ok = 0
        factor = 1.0
        while True:
            if h_abs < min_h:
                status = 1
                break
            h = h_abs * direction
            bad = 0
            for s in range(1, 6):
                for i in range(d):
                    e = 0.0
                    for j in range(s):
                        e += DP_A[s][j] * K[j][i]
                    dy[i] = y[i] + h * e
                ctx.call(t + DP_C[s] * h, dy, K[s])
                nfev += 1
                for i in range(d):
                    if not isfinite(K[s][i]):
                        bad = 1
                        break
                if bad:
                    break
            if not bad:
                for i in range(d):
                    e = 0.0
                    for j in range(6):
                        e += DP_B[j] * K[j][i]
                    y_new[i] = y[i] + h * e
                    if not isfinite(y_new[i]):
                        bad = 1
                if not bad:
                    ctx.call(t + h, y_new, K[6])
                    nfev += 1
                    for i in range(d):
                        if not isfinite(K[6][i]):
                            bad = 1
                            break
            if bad:
                h_abs *= 0.25
                continue
            for i in range(d):
                mx = fabs(y[i])
                if fabs(y_new[i]) > mx:
                    mx = fabs(y_new[i])
                sc[i] = atol + rtol * mx
                e = 0.0
                for j in range(7):
                    e += DP_E[j] * K[j][i]
                err[i] = h * e
            e = _rms_scaled(err, sc, d)
            if e <= 1.0:
                factor = MAX_FACTOR if e == 0.0 else SAFETY * pow(e, -0.2)
                if factor > MAX_FACTOR:
                    factor = MAX_FACTOR
                step_ok = 1
                break
            factor = SAFETY * pow(e, -0.2)
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            h_abs *= factor
        if not step_ok:
            break

        coef_np = np.empty((d, 4))
        for i in range(d):
            for j in range(4):
                e = 0.0
                for s in range(7):
                    e += K[s][i] * DP_P[s][j]
                coef_np[i, j] = h * e
        coef_list.append(coef_np)
        t = t + h
        mx = 0.0
        for i in range(d):
            y[i] = y_new[i]
            if fabs(y[i]) > mx:
                mx = fabs(y[i])
        arr = np.empty(d)
        for i in range(d):
            arr[i] = y[i]
        ts_list.append(t)
        ys_list.append(arr)
        accepted += 1
        if mx > escape_norm:
            status = 1
            break
        if ctx.mode == 1 and renorm_ratio > 0.0:
            if _maybe_renorm(ctx.n, ctx.k, y, renorm_ratio, cum):
                tf_times.append(t)
                tf_mats.append(np.asarray(cum).copy())
                arr2 = np.empty(d)
                for i in range(d):
                    arr2[i] = y[i]
                ys_list[len(ys_list) - 1] = arr2
                ctx.call(t, y, K[0])
                nfev += 1
            else:
                for i in range(d):
                    K[0][i] = K[6][i]
        else:
            for i in range(d):
                K[0][i] = K[6][i]
        h_abs = h_abs * factor
        if h_abs > max_step:
            h_abs = max_step

    return (np.array(ts_list), np.array(ys_list),
            np.array(coef_list) if coef_list else np.empty((0, d, 4)),
            status, nfev)


cdef int _maybe_renorm(int n, int k, double* y, double ratio_limit,
                       double[:, ::1] cum) noexcept:
    """Modified Gram-Schmidt QR on the (2n, k) column stack if conditioning
    degrades; accumulates R into ``cum`` (raw = stored @ cum)."""
    cdef double norms[MAXN]
    cdef double R[MAXN][MAXN]
    cdef double tmp[MAXN][MAXN]
    cdef double lo, hi, r, acc
    cdef int i, j, col, rows = 2 * n
    lo = 1e300
    hi = 0.0
    for col in range(k):
        acc = 0.0
        for i in range(rows):
            acc += y[i * k + col] * y[i * k + col]
        acc = sqrt(acc)
        if acc < lo:
            lo = acc
        if acc > hi:
            hi = acc
    if lo > 0.0 and hi / lo <= ratio_limit and hi <= 1e12:
        return 0
    for i in range(k):
        for j in range(k):
            R[i][j] = 0.0
    for col in range(k):
        for j in range(col):
            r = 0.0
            for i in range(rows):
                r += y[i * k + j] * y[i * k + col]
            R[j][col] = r
            for i in range(rows):
                y[i * k + col] -= r * y[i * k + j]
        r = 0.0
        for i in range(rows):
            r += y[i * k + col] * y[i * k + col]
        r = sqrt(r)
        R[col][col] = r
        if r > 0.0:
            for i in range(rows):
                y[i * k + col] /= r
    for i in range(k):
        for j in range(k):
            acc = 0.0
            for col in range(k):
                acc += R[i][col] * cum[col, j]
            tmp[i][j] = acc
    for i in range(k):
        for j in range(k):
            cum[i, j] = tmp[i][j]
    return 1


# ------------------------------------------------------------- entry points

def integrate_flow(params, double level, y0, double t0, double t1,
                   double rtol, double atol, double max_step=np.inf,
                   long max_steps=200_000, double escape_norm=1e8):
    cdef cnp.ndarray p_arr = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray y_arr = np.ascontiguousarray(y0, dtype=np.float64)
    cdef _Ctx ctx = _Ctx()
    ctx.params = p_arr
    ctx.level = level
    ctx.mode = 0
    ctx.n = <int> p_arr[1]
    ctx.k = 0
    ctx.d = y_arr.shape[0]
    if ctx.d > MAXD or ctx.n > MAXN:
        raise ValueError("state dimension exceeds compiled kernel limits")
    return _integrate(ctx, t0, y_arr, t1, rtol, atol, max_step, max_steps,
                      escape_norm, 0.0, [], [], np.eye(1))


def integrate_frame(params, base_ts, base_ys, base_coef, double base_dir,
                    y0, double t0, double t1, double rtol, double atol,
                    long max_steps=200_000, double renorm_ratio=1e7):
    cdef cnp.ndarray p_arr = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray y_arr = np.ascontiguousarray(y0, dtype=np.float64)
    cdef _Ctx ctx = _Ctx()
    ctx.params = p_arr
    ctx.level = 0.0
    ctx.mode = 1
    ctx.n = <int> p_arr[1]
    ctx.d = y_arr.shape[0]
    ctx.k = ctx.d // (2 * ctx.n)
    ctx.b_ts = np.ascontiguousarray(base_ts, dtype=np.float64)
    ctx.b_ys = np.ascontiguousarray(base_ys, dtype=np.float64)
    ctx.b_coef = np.ascontiguousarray(base_coef, dtype=np.float64)
    ctx.b_dir = base_dir
    if ctx.d > MAXD or ctx.n > MAXN:
        raise ValueError("state dimension exceeds compiled kernel limits")
    tf_times: list = []
    tf_mats: list = []
    cum = np.eye(ctx.k)
    ts, ys, coef, status, nfev = _integrate(
        ctx, t0, y_arr, t1, rtol, atol, np.inf, max_steps, 1e300,
        renorm_ratio, tf_times, tf_mats, cum)
    tf_t = np.asarray(tf_times, dtype=np.float64)
    tf_m = (np.asarray(tf_mats, dtype=np.float64) if tf_mats
            else np.empty((0, ctx.k, ctx.k)))
    return ts, ys, coef, status, nfev, tf_t, tf_m
