"""Compiled inner loops for the exact continuous-time simulation.

The state lives in a handful of arrays so that the loops can be resumed:

``eta``     uint8[n]       occupancies, index 0 is site 1
``bonds``   int64[n-1]     discordant bonds (bond b joins sites b+1, b+2)
``pos``     int64[n-1]     position of bond b inside ``bonds`` or -1
``istate``  int64[4]       n_discordant, particles, events, flips
``fstate``  float64[1]     raw time
``acc``     float64[3]     raw-time integrals of (alpha+beta-eta_1-eta_n),
                           V(eta) and r_alpha+r_beta

Each jump draws a standard exponential from ``rng`` for the holding time,
then a uniform for the event choice.
"""

import math

import numpy as np
from numba import njit

STOP_TIME = 0
STOP_EVENTS = 1


def new_state(eta):
    eta = np.ascontiguousarray(eta, dtype=np.uint8)
    n = eta.size
    bonds = np.zeros(n - 1, dtype=np.int64)
    pos = -np.ones(n - 1, dtype=np.int64)
    istate = np.zeros(4, dtype=np.int64)
    _init_bonds(eta, bonds, pos, istate)
    istate[1] = int(eta.sum())
    return eta, bonds, pos, istate, np.zeros(1), np.zeros(3)


@njit(cache=True, nogil=True)
def _init_bonds(eta, bonds, pos, istate):
    k = 0
    for b in range(eta.size - 1):
        if eta[b] != eta[b + 1]:
            bonds[k] = b
            pos[b] = k
            k += 1
        else:
            pos[b] = -1
    istate[0] = k


@njit(cache=True, nogil=True, inline="always")
def _toggle(eta, bonds, pos, nd, b):
    """Bring bond b's membership in the discordant set up to date; return new size."""
    disc = eta[b] != eta[b + 1]
    p = pos[b]
    if disc and p < 0:
        bonds[nd] = b
        pos[b] = nd
        return nd + 1
    if (not disc) and p >= 0:
        nd -= 1
        moved = bonds[nd]
        bonds[p] = moved
        pos[moved] = p
        pos[b] = -1
    return nd


@njit(cache=True, nogil=True)
def advance(eta, bonds, pos, istate, fstate, acc, rng,
            scale, alpha, beta, t_stop, max_events):
    """Run until raw time ``t_stop`` or until ``max_events`` more jumps.

    When the next jump would fall after ``t_stop`` the clock is set to
    ``t_stop`` and the pending jump is discarded, which is exact by the
    memoryless property.
    """
    n = eta.size
    last = n - 1
    inv_n = 1.0 / n
    inv_scale = 1.0 / scale
    rl0 = scale * alpha
    rl1 = scale * (1.0 - alpha)
    rr0 = scale * beta
    rr1 = scale * (1.0 - beta)
    ab = alpha + beta
    done = 0
    t = fstate[0]
    a0 = acc[0]
    a1 = acc[1]
    a2 = acc[2]
    nd = istate[0]
    particles = istate[1]
    flips = istate[3]
    reason = STOP_EVENTS
    while done < max_events:
        e1 = eta[0]
        en = eta[last]
        rl = rl1 if e1 else rl0
        rr = rr1 if en else rr0
        total = nd + rl + rr
        tau = rng.standard_exponential() / total
        if t + tau >= t_stop:
            tau = t_stop - t
            if tau > 0.0:
                a0 += (ab - e1 - en) * tau
                a1 += (e1 + en - 2.0 * particles * inv_n) * tau
                a2 += (rl + rr) * inv_scale * tau
            t = t_stop
            reason = STOP_TIME
            break
        a0 += (ab - e1 - en) * tau
        a1 += (e1 + en - 2.0 * particles * inv_n) * tau
        a2 += (rl + rr) * inv_scale * tau
        t += tau
        u = rng.random() * total
        if u < nd:
            k = int(u)
            if k >= nd:
                k = nd - 1
            b = bonds[k]
            tmp = eta[b]
            eta[b] = eta[b + 1]
            eta[b + 1] = tmp
            if b > 0:
                nd = _toggle(eta, bonds, pos, nd, b - 1)
            if b + 1 < last:
                nd = _toggle(eta, bonds, pos, nd, b + 1)
        elif u < nd + rl:
            eta[0] = 1 - e1
            particles += 1 - 2 * e1
            flips += 1
            nd = _toggle(eta, bonds, pos, nd, 0)
        else:
            eta[last] = 1 - en
            particles += 1 - 2 * en
            flips += 1
            nd = _toggle(eta, bonds, pos, nd, last - 1)
        done += 1
    fstate[0] = t
    acc[0] = a0
    acc[1] = a1
    acc[2] = a2
    istate[0] = nd
    istate[1] = particles
    istate[2] += done
    istate[3] = flips
    return reason


@njit(cache=True, nogil=True)
def sample(eta, bonds, pos, istate, fstate, acc, rng, scale, alpha, beta,
           n_samples, spacing, n_batches, with_pairs,
           site_sums, pair_sums, batch_counts, batch_site, batch_pair,
           batch_mass, mass_acc):
    """Record ``n_samples`` states at raw times spaced by ``spacing``.

    Samples are taken at fixed times rather than after a fixed number of
    jumps: the state seen just after the k-th jump follows the embedded
    chain, whose stationary law is tilted by the total rate.

    Sample i belongs to batch ``i * n_batches // n_samples`` so batches are
    contiguous and differ in size by at most one.
    """
    n = eta.size
    big = np.iinfo(np.int64).max
    for i in range(n_samples):
        advance(eta, bonds, pos, istate, fstate, acc, rng,
                scale, alpha, beta, fstate[0] + spacing, big)
        bi = i * n_batches // n_samples
        batch_counts[bi] += 1
        for x in range(n):
            if eta[x]:
                site_sums[x] += 1
                batch_site[bi, x] += 1
                if with_pairs:
                    for y in range(x + 1, n):
                        if eta[y]:
                            pair_sums[x, y] += 1
                            batch_pair[bi, x, y] += 1
        m = istate[1] / n
        batch_mass[bi, 0] += m
        batch_mass[bi, 1] += m * m
        mass_acc[0] += m
        mass_acc[1] += m * m
