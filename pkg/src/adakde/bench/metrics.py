"""Out-of-sample evaluation metric."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatchError, NonFiniteError
from ..kde import DensityModel, as_sample


def normalized_nll(model: DensityModel, test) -> float:
    """Mean negative log-density over ``test``, divided by the dimension.

    Can be negative: densities exceed one on compact supports.
    """
    Z = as_sample(test)
    d = Z.shape[1]
    if model.dim != d:
        raise DimensionMismatchError(f"model has d={model.dim}, test points have d={d}")
    logf = np.asarray(model.log_density(Z), dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(logf))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteError(f"log density is {logf[i]} at test point {i} ({Z[i].tolist()})")
    return float(-np.mean(logf) / d)
