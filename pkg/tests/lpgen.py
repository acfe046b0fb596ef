"""Random general-form LPs with a known feasible primal and dual point."""
import numpy as np

from cndsvne.neurolp import GeneralFormLp


def bounded_feasible_lp(rng, max_vars=10, max_rows=8, max_free=2):
    """Feasible and bounded by construction: a strictly feasible primal point
    and a dual-feasible multiplier pair are planted before the data is fixed."""
    n2 = int(rng.integers(0, max_free + 1))
    n1 = int(rng.integers(2, max_vars - n2 + 1))
    p2 = int(rng.integers(0, 3))
    p1 = int(rng.integers(1, max_rows - p2 + 1))
    n = n1 + n2
    a_ge = rng.normal(size=(p1, n))
    a_eq = rng.normal(size=(p2, n))
    z0 = np.concatenate([rng.uniform(0, 2, n1), rng.normal(size=n2)])
    b_ge = a_ge @ z0 - rng.uniform(0, 1, p1)
    b_eq = a_eq @ z0
    y_ge = rng.uniform(0, 2, p1)
    y_eq = rng.normal(size=p2)
    cost = a_ge.T @ y_ge + a_eq.T @ y_eq
    cost[:n1] += rng.uniform(0, 1, n1)
    return GeneralFormLp.from_rows(cost, a_ge, b_ge, a_eq, b_eq, n_free=n2)


def random_lp(rng, max_vars=30):
    """Arbitrary small instance, feasibility not guaranteed."""
    n = int(rng.integers(2, max_vars + 1))
    n2 = int(rng.integers(0, min(4, n - 1) + 1))
    p1 = int(rng.integers(1, 10))
    p2 = int(rng.integers(0, 5))
    return GeneralFormLp.from_rows(
        rng.normal(size=n), rng.normal(size=(p1, n)), rng.normal(size=p1),
        rng.normal(size=(p2, n)), rng.normal(size=p2), n_free=n2,
    )
