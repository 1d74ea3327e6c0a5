"""Input checking for the estimator front-ends."""
import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import DomainError

SURV_DTYPE = np.dtype([("event", bool), ("time", float)])


def make_survival_y(time, event):
    """Pack times and event flags into a structured array with fields ``event``, ``time``."""
    time = np.asarray(time, dtype=float).ravel()
    event = np.asarray(event).ravel()
    check_consistent_length(time, event)
    y = np.empty(time.shape[0], dtype=SURV_DTYPE)
    y["time"] = time
    y["event"] = event.astype(bool)
    return y


def check_survival_y(y):
    """Return ``(time, event)`` from a structured array, an ``(n, 2)`` array or a pair.

    An ``(n, 2)`` array is read as columns ``time, event``.
    """
    if isinstance(y, tuple) and len(y) == 2:
        time, event = y
    elif isinstance(y, np.ndarray) and y.dtype.names is not None:
        if not {"time", "event"} <= set(y.dtype.names):
            raise ValueError("structured survival target needs 'time' and 'event' fields")
        time, event = y["time"], y["event"]
    else:
        arr = check_array(y, ensure_2d=True, dtype=float)
        if arr.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) survival target, got shape {arr.shape}")
        time, event = arr[:, 0], arr[:, 1]
    time = np.asarray(time, dtype=float).ravel()
    event_raw = np.asarray(event).ravel()
    check_consistent_length(time, event_raw)
    if not np.all(np.isfinite(time)) or np.any(time < 0):
        raise DomainError("survival times must be finite and nonnegative")
    if not np.all((event_raw == 0) | (event_raw == 1)):
        raise DomainError("event indicators must be 0 or 1")
    return time, event_raw.astype(np.int64)


def check_X_y(X, y):
    X = check_array(X, dtype=float)
    time, event = check_survival_y(y)
    check_consistent_length(X, time)
    return X, time, event
