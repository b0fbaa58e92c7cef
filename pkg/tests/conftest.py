"""Independent reference implementations used as test oracles."""

import math
import re

import numpy as np
import pytest


def brute_posterior(pi, theta, y):
    """Posterior over components by direct products, no logs."""
    out = []
    for row in y:
        terms = []
        for k in range(len(pi)):
            p = pi[k]
            for d, v in enumerate(row):
                p *= theta[d][k] if v else 1.0 - theta[d][k]
            terms.append(p)
        total = sum(terms)
        out.append([t / total for t in terms])
    return np.array(out)


def brute_log_likelihood(pi, theta, y):
    total = 0.0
    for row in y:
        mix = 0.0
        for k in range(len(pi)):
            mix += pi[k] * math.prod(
                theta[d][k] if v else 1.0 - theta[d][k] for d, v in enumerate(row))
        total += math.log(mix)
    return total


def reference_greedy(S, tau):
    """Each round scans every remaining entry for the maximum (row, col order on ties)."""
    S = [list(map(float, r)) for r in S]
    rows = set(range(len(S)))
    cols = set(range(len(S[0]) if S else 0))
    out = []
    while rows and cols:
        best = None
        for i in sorted(rows):
            for j in sorted(cols):
                if best is None or S[i][j] > best[2]:
                    best = (i, j, S[i][j])
        if best[2] < tau:
            break
        out.append(best)
        rows.discard(best[0])
        cols.discard(best[1])
    return out


_EDGE = re.compile(r'"G(\d+):C(\d+)"\s*->\s*"G(\d+):C(\d+)"\s*\[weight=([0-9.eE+-]+)')
_NODE = re.compile(r'^\s*"G(\d+):C(\d+)";\s*$', re.M)


def parse_dot(text):
    nodes = [(int(g), int(c)) for g, c in _NODE.findall(text)]
    edges = [((int(a), int(b)), (int(c), int(d)), float(w))
             for a, b, c, d, w in _EDGE.findall(text)]
    return nodes, edges


def sample_mixture(rng, pi, theta, n):
    theta = np.asarray(theta)
    k = rng.choice(len(pi), size=n, p=pi)
    y = (rng.random((n, theta.shape[0])) < theta[:, k].T).astype(np.uint8)
    return y, k


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (text, report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        text, outcome, duration = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {text} ({duration:.1f}s)")
