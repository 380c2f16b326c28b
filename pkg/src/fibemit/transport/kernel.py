"""Numba kernels for the binary-collision Monte Carlo.

Every history draws from its own splitmix64 stream keyed by
``(seed, history index)``, so results do not depend on how histories are
scheduled across threads.
"""

import math

import numpy as np
from numba import njit, prange

from .zbl import closest_approach, magic_sin2_half, screening

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
KEY_MUL = np.uint64(0xD1B54A32D192ED03)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0

SCATTER_MAGIC = 0
SCATTER_GAUSS_MEHLER = 1
SCATTER_TABLE = 2

# lookup-table header layout
T_LOG_EPS0 = 0
T_INV_DLOG_EPS = 1
T_LOG_B0 = 2
T_INV_DLOG_B = 3

# parameter vector layout for one projectile/target pair
P_EPS_FACTOR = 0   # reduced energy per lab eV
P_INV_SCREEN = 1   # 1 / screening length (1/nm)
P_GAMMA = 2        # 4 m1 m2 / (m1 + m2)^2
P_MASS_RATIO = 3   # m1 / m2
P_KL = 4           # electronic stopping, eV/nm per sqrt(eV)
NPAIR = 5


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(inline="always")
def stream_key(seed, index):
    return _mix(np.uint64(seed) * GOLDEN ^ (np.uint64(index) + np.uint64(1)) * KEY_MUL)


@njit(inline="always")
def _uniform(state):
    state[0] += GOLDEN
    return float(_mix(state[0]) >> S11) * INV53


@njit(cache=True)
def uniforms(seed, index, n):
    """First ``n`` uniforms of the stream for ``(seed, index)``; used by tests."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = stream_key(seed, index)
    out = np.empty(n)
    for i in range(n):
        out[i] = _uniform(state)
    return out


@njit(cache=True)
def gauss_mehler_sin2_half(eps, b, nodes):
    """``(cos, sin^2)`` of theta/2 by fixed-node Gauss-Mehler quadrature."""
    if b <= 0.0:
        return 0.0, 1.0
    r0 = closest_approach(eps, b)
    s = 0.0
    for j in range(1, nodes + 1):
        u = math.cos((2.0 * j - 1.0) * math.pi / (4.0 * nodes))
        x = r0 / u
        f = 1.0 - screening(x) / (x * eps) - (b * u / r0) ** 2
        if f > 0.0:
            s += math.sqrt((1.0 - u * u) / f)
    theta = math.pi - (2.0 * b / r0) * (math.pi / (2.0 * nodes)) * s
    if theta < 0.0:
        theta = 0.0
    sh = math.sin(0.5 * theta)
    return math.cos(0.5 * theta), sh * sh


@njit(cache=True)
def build_table(eps_lo, eps_hi, b_lo, b_hi, n_eps, n_b, method):
    """Tabulate ``log sin^2(theta/2)`` on a log-log (eps, b) grid."""
    tab = np.empty((n_eps, n_b))
    le0 = math.log(eps_lo)
    dle = (math.log(eps_hi) - le0) / (n_eps - 1)
    lb0 = math.log(b_lo)
    dlb = (math.log(b_hi) - lb0) / (n_b - 1)
    for i in range(n_eps):
        eps = math.exp(le0 + i * dle)
        for j in range(n_b):
            b = math.exp(lb0 + j * dlb)
            if method == SCATTER_MAGIC:
                s2 = magic_sin2_half(eps, b)[1]
            else:
                s2 = gauss_mehler_sin2_half(eps, b, 10)[1]
            tab[i, j] = math.log(max(s2, 1e-300))
    head = np.array([le0, 1.0 / dle, lb0, 1.0 / dlb])
    return tab, head


@njit(inline="always")
def _table_s2(tab, head, eps, b):
    fi = (math.log(eps) - head[T_LOG_EPS0]) * head[T_INV_DLOG_EPS]
    if b <= 0.0:
        fj = 0.0
    else:
        fj = (math.log(b) - head[T_LOG_B0]) * head[T_INV_DLOG_B]
    ni = tab.shape[0] - 1
    nj = tab.shape[1] - 1
    if fi < 0.0:
        fi = 0.0
    elif fi > ni:
        fi = float(ni)
    if fj < 0.0:
        fj = 0.0
    elif fj > nj:
        fj = float(nj)
    i = min(int(fi), ni - 1)
    j = min(int(fj), nj - 1)
    ti = fi - i
    tj = fj - j
    v = ((1.0 - ti) * ((1.0 - tj) * tab[i, j] + tj * tab[i, j + 1])
         + ti * ((1.0 - tj) * tab[i + 1, j] + tj * tab[i + 1, j + 1]))
    return math.exp(v)


@njit(inline="always")
def _scatter(eps, b, method, tab, head):
    """``(cos(theta/2), sin^2(theta/2))`` for the chosen scattering route."""
    if method == SCATTER_TABLE:
        s2 = _table_s2(tab, head, eps, b)
        if s2 > 1.0:
            s2 = 1.0
        return math.sqrt(1.0 - s2), s2
    if method == SCATTER_MAGIC:
        return magic_sin2_half(eps, b)
    return gauss_mehler_sin2_half(eps, b, 10)


@njit(inline="always")
def _rotate(ux, uy, uz, cpsi, spsi, phi):
    cphi = math.cos(phi)
    sphi = math.sin(phi)
    if abs(uz) > 0.99999:
        nx = spsi * cphi
        ny = spsi * sphi
        nz = cpsi if uz > 0 else -cpsi
    else:
        t = math.sqrt(1.0 - uz * uz)
        nx = spsi * (ux * uz * cphi - uy * sphi) / t + ux * cpsi
        ny = spsi * (uy * uz * cphi + ux * sphi) / t + uy * cpsi
        nz = -spsi * cphi * t + uz * cpsi
    n = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / n, ny / n, nz / n


@njit(inline="always")
def nrt_vacancies(t, ed, el, kdam):
    """Displacements for a recoil of energy ``t``: NRT count on Lindhard damage energy."""
    e = t / el
    g = 3.4008 * e ** (1.0 / 6.0) + 0.40244 * e ** 0.75 + e
    tdam = t / (1.0 + kdam * g)
    n = int(math.floor(0.8 * tdam / (2.0 * ed)))
    return n if n > 1 else 1


@njit(inline="always")
def _deposit(row, depth, count, bin_width):
    k = int(depth / bin_width)
    if k < 0:
        k = 0
    elif k >= row.size:
        k = row.size - 1
    row[k] += count


@njit(cache=True)
def _cascade(state, e0, z0, ux, uy, uz, rec, rtab, rhead, free_path, pmax, ed,
             el, kdam, method, vac_row, bin_width, stack):
    """Follow a target recoil and its descendants; returns displacements deposited."""
    total = 0
    stack[0, 0] = e0
    stack[0, 1] = z0
    stack[0, 2] = ux
    stack[0, 3] = uy
    stack[0, 4] = uz
    top = 1
    nmax = stack.shape[0]
    a = rec[P_MASS_RATIO]
    while top > 0:
        top -= 1
        e = stack[top, 0]
        z = stack[top, 1]
        ux = stack[top, 2]
        uy = stack[top, 3]
        uz = stack[top, 4]
        while e >= ed:
            z += free_path * uz
            if z < 0.0:
                break
            de = rec[P_KL] * math.sqrt(e) * free_path
            e = e - de if de < e else 0.0
            if e < ed:
                break
            p = pmax * math.sqrt(_uniform(state))
            c, s2 = _scatter(e * rec[P_EPS_FACTOR], p * rec[P_INV_SCREEN], method, rtab, rhead)
            t = rec[P_GAMMA] * e * s2
            sh = math.sqrt(s2)
            cth = c * c - s2
            sth = 2.0 * c * sh
            phi = 2.0 * math.pi * _uniform(state)
            if t >= ed:
                total += 1
                _deposit(vac_row, z, 1, bin_width)
                if top < nmax:
                    # recoil leaves at (pi - theta)/2 to the incoming direction
                    rx, ry, rz = _rotate(ux, uy, uz, sh, c, phi + math.pi)
                    stack[top, 0] = t - ed
                    stack[top, 1] = z
                    stack[top, 2] = rx
                    stack[top, 3] = ry
                    stack[top, 4] = rz
                    top += 1
                else:
                    extra = nrt_vacancies(t, ed, el, kdam) - 1
                    total += extra
                    _deposit(vac_row, z, extra, bin_width)
            e -= t
            d = math.sqrt(1.0 + 2.0 * a * cth + a * a)
            ux, uy, uz = _rotate(ux, uy, uz, (cth + a) / d, sth / d, phi)
    return total


@njit(cache=True)
def run_history(e0, ion, itab, ihead, rec, rtab, rhead, free_path, pmax, ed, cutoff,
                el, kdam, nrt, method, full_cascade, seed, index, vac_row, bin_width,
                stack, ev_depth, ev_energy):
    """Transport one ion from the surface along +z.

    Returns ``(stop_depth, backscattered, e_electronic, e_nuclear, e_residual,
    n_events, n_vacancies)``. Collision events are written to ``ev_depth`` /
    ``ev_energy`` while they have room.
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = stream_key(seed, index)
    e = e0
    z = 0.0
    ux, uy, uz = 0.0, 0.0, 1.0
    e_el = 0.0
    e_nuc = 0.0
    n_ev = 0
    n_vac = 0
    cap = ev_depth.size
    back = False
    a = ion[P_MASS_RATIO]
    if e < cutoff:
        return 0.0, False, 0.0, 0.0, e, 0, 0
    while True:
        z += free_path * uz
        de = ion[P_KL] * math.sqrt(e) * free_path
        if de > e:
            de = e
        e -= de
        e_el += de
        if z < 0.0:
            back = True
            break
        if e < cutoff:
            break
        p = pmax * math.sqrt(_uniform(state))
        c, s2 = _scatter(e * ion[P_EPS_FACTOR], p * ion[P_INV_SCREEN], method, itab, ihead)
        t = ion[P_GAMMA] * e * s2
        sh = math.sqrt(s2)
        cth = c * c - s2
        sth = 2.0 * c * sh
        phi = 2.0 * math.pi * _uniform(state)
        if n_ev < cap:
            ev_depth[n_ev] = z
            ev_energy[n_ev] = t
        n_ev += 1
        if t >= ed:
            if full_cascade:
                n_vac += 1
                _deposit(vac_row, z, 1, bin_width)
                rx, ry, rz = _rotate(ux, uy, uz, sh, c, phi + math.pi)
                n_vac += _cascade(state, t - ed, z, rx, ry, rz, rec, rtab, rhead, free_path,
                                  pmax, ed, el, kdam, method, vac_row, bin_width, stack)
            else:
                nv = nrt_vacancies(t, ed, el, kdam) if nrt else 1
                n_vac += nv
                _deposit(vac_row, z, nv, bin_width)
        e -= t
        e_nuc += t
        d = math.sqrt(1.0 + 2.0 * a * cth + a * a)
        ux, uy, uz = _rotate(ux, uy, uz, (cth + a) / d, sth / d, phi)
        if e < cutoff:
            break
    return z, back, e_el, e_nuc, e, n_ev, n_vac


@njit(parallel=True, cache=True)
def run_block(e0, ion, itab, ihead, rec, rtab, rhead, free_path, pmax, ed, cutoff,
              el, kdam, nrt, method, full_cascade, seed, start, count, nbins, bin_width):
    """Transport histories ``start .. start+count-1``.

    One vacancy-histogram row per history keeps threads from sharing memory;
    the caller sums rows with integer arithmetic.
    """
    depth = np.empty(count)
    back = np.zeros(count, dtype=np.bool_)
    energies = np.empty((count, 3))
    vac = np.zeros((count, nbins), dtype=np.int64)
    for i in prange(count):
        stack = np.empty((256, 5))
        ev_d = np.empty(0)
        ev_e = np.empty(0)
        z, b, eel, enuc, eres, nev, nvac = run_history(
            e0, ion, itab, ihead, rec, rtab, rhead, free_path, pmax, ed, cutoff, el,
            kdam, nrt, method, full_cascade, seed, start + i, vac[i], bin_width, stack,
            ev_d, ev_e)
        depth[i] = z
        back[i] = b
        energies[i, 0] = eel
        energies[i, 1] = enuc
        energies[i, 2] = eres
    return depth, back, energies, vac
