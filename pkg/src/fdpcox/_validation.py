"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .privacy import PrivacyBudget
from .survival import Dataset, ModelBounds


def check_survival_y(y):
    """Split ``y`` into ``(time, event)``.

    Accepts a structured array with two fields (event first or time first,
    detected by dtype), an ``(n, 2)`` array with columns ``(time, event)``, or a
    ``(time, event)`` pair of arrays.
    """
    if isinstance(y, tuple) and len(y) == 2:
        time, event = (np.asarray(a) for a in y)
    else:
        y = np.asarray(y)
        if y.dtype.names is not None:
            if len(y.dtype.names) != 2:
                raise ValueError("structured y must have exactly two fields")
            a, b = (y[name] for name in y.dtype.names)
            time, event = (b, a) if a.dtype == bool else (a, b)
        elif y.ndim == 2 and y.shape[1] == 2:
            time, event = y[:, 0], y[:, 1]
        else:
            raise ValueError("y must be (time, event) pairs")
    time = np.asarray(time, dtype=float).reshape(-1)
    event = np.asarray(event).reshape(-1)
    if not np.all((event == 0) | (event == 1)):
        raise ValueError("event indicators must be 0/1 or boolean")
    return time, event.astype(np.int8)


def check_survival_data(X, y, bounds: ModelBounds | None = None) -> Dataset:
    X = check_array(X, dtype=float, ensure_min_samples=1)
    time, event = check_survival_y(y)
    check_consistent_length(X, time, event)
    data = Dataset(time, event, X)
    if bounds is not None:
        data.check_bounds(bounds)
    return data


def split_groups(data: Dataset, groups):
    """Partition ``data`` by group label, labels sorted, record order kept."""
    if groups is None:
        return [data], [None]
    groups = np.asarray(groups).reshape(-1)
    check_consistent_length(data.time, groups)
    labels = np.unique(groups)
    return [data.subset(np.flatnonzero(groups == g)) for g in labels], list(labels)


def per_server_budgets(epsilon, delta, n_servers: int) -> tuple:
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (n_servers,))
    dlt = np.broadcast_to(np.asarray(delta, dtype=float), (n_servers,))
    return tuple(PrivacyBudget(float(e), float(d)) for e, d in zip(eps, dlt))
