"""Reference Metropolis step kernels (pure Python).

The compiled module `_kernels` is a line-for-line transliteration of this
file; both consume identical pre-drawn random blocks (agent indices,
scaled log-normal noise, log-uniform thresholds) so the two backends
produce bit-identical chains.  Keep the arithmetic order in sync when
editing either copy.

Variant codes: 0 NonInteracting, 1 MeanFieldPreference, 2 PairwiseHamiltonian.
Caches (logx, xbar, lbar, mpow, qpow) are updated incrementally on
accepted moves; the caller resyncs them periodically.
"""

from math import exp, log

COMPILED = False


def run_block_canonical(x, logx, xbar, lbar, mpow, qpow, prices, budgets,
                        prefs, beta, variant, c, kpow, J, rho, selfish,
                        agents, xi, logu, scratch):
    """Advance the hard-budget chain by len(agents) single-agent steps.

    Proposals are multiplicative log-normal moves rescaled back onto the
    agent's budget plane; the acceptance log-ratio is beta*dU plus the
    log-volume factor sum_i log(y_i/x_i).  Returns the accepted count.
    """
    N = x.shape[0]
    M = x.shape[1]
    T = agents.shape[0]
    y = scratch[0]
    dlog = scratch[1]
    accepted = 0
    for t in range(T):
        alpha = agents[t]
        # propose: y' = x * exp(xi), then rescale onto the budget plane
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

        # utility change, O(M), against the cached population state
        du = 0.0
        if variant == 0:
            for i in range(M):
                du += prefs[alpha, i] * dlog[i]
        elif variant == 1:
            if selfish == 1:
                for i in range(M):
                    du += prefs[alpha, i] * (1.0 + c * xbar[i] ** kpow) * dlog[i]
            else:
                for i in range(M):
                    nxbar = xbar[i] + (y[i] - x[alpha, i]) / N
                    nlbar = lbar[i] + dlog[i] / N
                    du += prefs[alpha, i] * (
                        (1.0 + c * nxbar ** kpow) * nlbar
                        - (1.0 + c * xbar[i] ** kpow) * lbar[i]
                    )
                du *= N
        else:
            for i in range(M):
                po = x[alpha, i] ** rho
                pn = y[i] ** rho
                nm = mpow[i] + (pn - po)
                nq = qpow[i] + (pn * pn - po * po)
                pair = (nm * nm - nq) - (mpow[i] * mpow[i] - qpow[i])
                du += prefs[alpha, i] * (dlog[i] + J / (2.0 * N) * pair)

        if logu[t] < beta * du + jac:
            for i in range(M):
                if variant == 2:
                    po = x[alpha, i] ** rho
                    pn = y[i] ** rho
                    mpow[i] += pn - po
                    qpow[i] += pn * pn - po * po
                xbar[i] += (y[i] - x[alpha, i]) / N
                lbar[i] += dlog[i] / N
                x[alpha, i] = y[i]
                logx[alpha, i] += dlog[i]
            accepted += 1
    return accepted


def run_block_grand(x, logx, xbar, lbar, mpow, qpow, prices, mu,
                    prefs, beta, variant, c, kpow, J, rho, selfish,
                    agents, xi, logu, scratch):
    """Advance the soft-budget chain: pure log-normal moves, no rescale.

    Samples exp(beta [U - mu sum_a p.x^a]); the log-volume factor reduces
    to sum_i xi_i.  Returns the accepted count.
    """
    N = x.shape[0]
    M = x.shape[1]
    T = agents.shape[0]
    y = scratch[0]
    dlog = scratch[1]
    accepted = 0
    for t in range(T):
        alpha = agents[t]
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
                    du += prefs[alpha, i] * (1.0 + c * xbar[i] ** kpow) * dlog[i]
            else:
                for i in range(M):
                    nxbar = xbar[i] + (y[i] - x[alpha, i]) / N
                    nlbar = lbar[i] + dlog[i] / N
                    du += prefs[alpha, i] * (
                        (1.0 + c * nxbar ** kpow) * nlbar
                        - (1.0 + c * xbar[i] ** kpow) * lbar[i]
                    )
                du *= N
        else:
            for i in range(M):
                po = x[alpha, i] ** rho
                pn = y[i] ** rho
                nm = mpow[i] + (pn - po)
                nq = qpow[i] + (pn * pn - po * po)
                pair = (nm * nm - nq) - (mpow[i] * mpow[i] - qpow[i])
                du += prefs[alpha, i] * (dlog[i] + J / (2.0 * N) * pair)

        if logu[t] < beta * (du - mu * dspend) + jac:
            for i in range(M):
                if variant == 2:
                    po = x[alpha, i] ** rho
                    pn = y[i] ** rho
                    mpow[i] += pn - po
                    qpow[i] += pn * pn - po * po
                xbar[i] += (y[i] - x[alpha, i]) / N
                lbar[i] += dlog[i] / N
                x[alpha, i] = y[i]
                logx[alpha, i] += dlog[i]
            accepted += 1
    return accepted
