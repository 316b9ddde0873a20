"""Frozen empirical constants.

DOUBLE_NULL_CONSTANT is 1.5 times the largest ratio |cubic form| / (bound groups)
observed over the standard analytic corpus (five fields, 10^4 cone points each,
seed 20240501).  Regenerate with ``python -m membrane.calibrated``.
"""

DOUBLE_NULL_CONSTANT = 2.9544063987543607


def _recompute() -> float:
    import numpy as np

    from .fields import cone_points, standard_corpus
    from .nullforms import DerivativeBundle, calibrate_double_null

    rng = np.random.default_rng(20240501)
    bundles = []
    for field in standard_corpus():
        t, x = cone_points(10_000, rng)
        coords_u = field.jet(t, x, 2)
        from .jets import Jet

        coords = Jet.coordinates([t] + x, 2)
        bundles.append(DerivativeBundle.from_jet(coords_u, coords))
    return calibrate_double_null(bundles)


if __name__ == "__main__":
    print(_recompute())
