# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Metropolis step kernels.

Line-for-line transliteration of `_kernels_py.py` (see its docstring for
the contract); the arithmetic order is kept identical so both backends
produce bit-identical chains from the same pre-drawn random blocks.
"""

from libc.math cimport exp, log, pow

COMPILED = True


def run_block_canonical(double[:, ::1] x, double[:, ::1] logx,
                        double[::1] xbar, double[::1] lbar,
                        double[::1] mpow, double[::1] qpow,
                        double[::1] prices, double[::1] budgets,
                        double[:, ::1] prefs, double beta, int variant,
                        double c, double kpow, double J, double rho,
                        int selfish, long long[::1] agents,
                        double[:, ::1] xi, double[::1] logu,
                        double[:, ::1] scratch):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t M = x.shape[1]
    cdef Py_ssize_t T = agents.shape[0]
    cdef double[::1] y = scratch[0]
    cdef double[::1] dlog = scratch[1]
    cdef long long accepted = 0
    cdef Py_ssize_t t, i, alpha
    cdef double spend, r, log_r, jac, yi, d, du, nxbar, nlbar, po, pn, nm, nq, pair
    for t in range(T):
        alpha = <Py_ssize_t> agents[t]
        spend = 0.0
        for i in range(M):
            yi = x[alpha, i] * exp(xi[t, i])
            y[i] = yi
            spend += prices[i] * yi
        r = budgets[alpha] / spend
        log_r = log(r)
        jac = 0.0
        for i in range(M):
            y[i] = y[i] * r
            d = xi[t, i] + log_r
            dlog[i] = d
            jac += d

        du = 0.0
        if variant == 0:
            for i in range(M):
                du += prefs[alpha, i] * dlog[i]
        elif variant == 1:
            if selfish == 1:
                for i in range(M):
                    du += prefs[alpha, i] * (1.0 + c * pow(xbar[i], kpow)) * dlog[i]
            else:
                for i in range(M):
                    nxbar = xbar[i] + (y[i] - x[alpha, i]) / N
                    nlbar = lbar[i] + dlog[i] / N
                    du += prefs[alpha, i] * (
                        (1.0 + c * pow(nxbar, kpow)) * nlbar
                        - (1.0 + c * pow(xbar[i], kpow)) * lbar[i]
                    )
                du *= N
        else:
            for i in range(M):
                po = pow(x[alpha, i], rho)
                pn = pow(y[i], rho)
                nm = mpow[i] + (pn - po)
                nq = qpow[i] + (pn * pn - po * po)
                pair = (nm * nm - nq) - (mpow[i] * mpow[i] - qpow[i])
                du += prefs[alpha, i] * (dlog[i] + J / (2.0 * N) * pair)

        if logu[t] < beta * du + jac:
            for i in range(M):
                if variant == 2:
                    po = pow(x[alpha, i], rho)
                    pn = pow(y[i], rho)
                    mpow[i] += pn - po
                    qpow[i] += pn * pn - po * po
                xbar[i] += (y[i] - x[alpha, i]) / N
                lbar[i] += dlog[i] / N
                x[alpha, i] = y[i]
                logx[alpha, i] += dlog[i]
            accepted += 1
    return accepted


def run_block_grand(double[:, ::1] x, double[:, ::1] logx,
                    double[::1] xbar, double[::1] lbar,
                    double[::1] mpow, double[::1] qpow,
                    double[::1] prices, double mu,
                    double[:, ::1] prefs, double beta, int variant,
                    double c, double kpow, double J, double rho,
                    int selfish, long long[::1] agents,
                    double[:, ::1] xi, double[::1] logu,
                    double[:, ::1] scratch):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t M = x.shape[1]
    cdef Py_ssize_t T = agents.shape[0]
    cdef double[::1] y = scratch[0]
    cdef double[::1] dlog = scratch[1]
    cdef long long accepted = 0
    cdef Py_ssize_t t, i, alpha
    cdef double jac, dspend, yi, du, nxbar, nlbar, po, pn, nm, nq, pair
    for t in range(T):
        alpha = <Py_ssize_t> agents[t]
        jac = 0.0
        dspend = 0.0
        for i in range(M):
            yi = x[alpha, i] * exp(xi[t, i])
            y[i] = yi
            dlog[i] = xi[t, i]
            jac += xi[t, i]
            dspend += prices[i] * (yi - x[alpha, i])

        du = 0.0
        if variant == 0:
            for i in range(M):
                du += prefs[alpha, i] * dlog[i]
        elif variant == 1:
            if selfish == 1:
                for i in range(M):
                    du += prefs[alpha, i] * (1.0 + c * pow(xbar[i], kpow)) * dlog[i]
            else:
                for i in range(M):
                    nxbar = xbar[i] + (y[i] - x[alpha, i]) / N
                    nlbar = lbar[i] + dlog[i] / N
                    du += prefs[alpha, i] * (
                        (1.0 + c * pow(nxbar, kpow)) * nlbar
                        - (1.0 + c * pow(xbar[i], kpow)) * lbar[i]
                    )
                du *= N
        else:
            for i in range(M):
                po = pow(x[alpha, i], rho)
                pn = pow(y[i], rho)
                nm = mpow[i] + (pn - po)
                nq = qpow[i] + (pn * pn - po * po)
                pair = (nm * nm - nq) - (mpow[i] * mpow[i] - qpow[i])
                du += prefs[alpha, i] * (dlog[i] + J / (2.0 * N) * pair)

        if logu[t] < beta * (du - mu * dspend) + jac:
            for i in range(M):
                if variant == 2:
                    po = pow(x[alpha, i], rho)
                    pn = pow(y[i], rho)
                    mpow[i] += pn - po
                    qpow[i] += pn * pn - po * po
                xbar[i] += (y[i] - x[alpha, i]) / N
                lbar[i] += dlog[i] / N
                x[alpha, i] = y[i]
                logx[alpha, i] += dlog[i]
            accepted += 1
    return accepted
