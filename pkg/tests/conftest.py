import numpy as np
from scipy.integrate import cumulative_trapezoid

from csqpt.hilbert import quad_vectors


def analytic_cdf(density, lo=-10.0, hi=10.0, n=20001):
    """Normalized CDF of a density evaluated on a fine grid, as an interpolating callable."""
    xs = np.linspace(lo, hi, n)
    c = cumulative_trapezoid(density(xs), xs, initial=0.0)
    c /= c[-1]
    return lambda x: np.interp(x, xs, c)


def ks_statistic(samples, cdf):
    x = np.sort(samples)
    F = cdf(x)
    n = len(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def povm_density(sigma, theta, povm=None):
    """``x -> Tr[sigma Pi(theta, x)]``, optionally through a map applied to each projector."""
    def density(xs):
        v = quad_vectors(sigma.shape[0], theta, xs)
        if povm is None:
            return np.real(np.einsum("bj,jk,bk->b", v.conj(), sigma, v))
        out = np.empty(len(xs))
        for i, row in enumerate(v):
            out[i] = np.real(np.trace(sigma @ povm(np.outer(row, row.conj()))))
        return out
    return density


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    print(ACCEPTANCE[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
