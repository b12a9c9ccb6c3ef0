"""Smoke test for the couplex Python extension.

Build and install first:
    pip install maturin && maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/couplex-*.whl
"""

import json
import math
from pathlib import Path

import couplex
from scipy import stats

ROOT = Path(__file__).resolve().parent.parent


def main():
    c = couplex.MaximalCoupling([0.7, 0.3], [0.5, 0.5])
    assert abs(c.q - 0.8) < 1e-15, c.q
    assert max(abs(a - b) for a, b in zip(c.mixture_masses(1), [0.7, 0.3])) < 1e-12
    pairs = c.sample(20000, seed=5)
    mismatch = sum(a != b for a, b in pairs) / len(pairs)
    assert abs(mismatch - 0.2) < 3 * math.sqrt(0.2 * 0.8 / len(pairs)), mismatch
    assert pairs == c.sample(20000, seed=5)

    assert abs(couplex.tv_exact([0.7, 0.3], [0.5, 0.5]) - 0.2) < 1e-15

    ref = 2 * stats.norm.cdf(-1.0 / (2 * 0.5))
    assert abs(couplex.gaussian_overlap(0.0, 1.0, 0.5) - ref) < 1e-10
    assert abs(couplex.gaussian_tv(0.0, 0.5, 1.0, 0.5) - (1 - ref)) < 1e-10

    cells = couplex.poisson_cell_masses([0.0, 0.0], 1.0, 8)
    assert max(abs(m - 1 / 8) for m in cells) < 1e-10

    k = [[0.9, 0.1], [0.2, 0.8]]
    assert abs(couplex.chain_md(k, [0, 1], [0, 1]) - 0.3) < 1e-12
    pi = couplex.chain_marginal(k, [1.0, 0.0], 200)
    assert abs(pi[0] - 2 / 3) < 1e-9, pi

    report = json.loads(couplex.run("oracle", (ROOT / "configs/oracle_overlap.toml").read_text()))
    assert report["passed"], report["checks"]
    report = json.loads(couplex.run("couple", (ROOT / "configs/couple_bernoulli.toml").read_text(), seed=3))
    assert report["config"]["seed"] == 3 and report["passed"]

    try:
        couplex.tv_exact([0.5, 0.5], [1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("mismatched supports accepted")

    print(f"couplex {couplex.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
