import functools

from knudsen.geometry import make_bumps, make_mixture, make_two_bumps
from knudsen.operator import build_matrix


@functools.lru_cache(maxsize=None)
def bumps_matrix(K: float, M: int = 400, N: int = 4000):
    """Traced matrices are shared across test modules within one session."""
    return build_matrix(make_bumps(K), M, N)


@functools.lru_cache(maxsize=None)
def mixture_matrix(alpha: float, M: int = 400, N: int = 4000):
    return build_matrix(make_mixture(alpha), M, N)


@functools.lru_cache(maxsize=None)
def two_bumps_matrix(d: float, M: int = 400, N: int = 4000):
    return build_matrix(make_two_bumps(d), M, N)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
