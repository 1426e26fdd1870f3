"""Backend selection for the Bellman stage.

The compiled extension is used when it was built; setting
``ECODRIVE_BACKEND=python`` forces the numpy implementation.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernel_py

BACKEND = "python"
_impl = _kernel_py
if os.environ.get("ECODRIVE_BACKEND", "").lower() != "python":
    try:
        from . import _dpkernel as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernel_py


def _prep(next_values, iv0, wv, is0, ws, it0, wt, cost, mask):
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    i = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    return (f(next_values), i(iv0), f(wv), i(is0), f(ws), i(it0), f(wt), f(cost),
            np.ascontiguousarray(mask, dtype=np.uint8))


def bellman_stage(next_values, iv0, wv, is0, ws, it0, wt, cost, mask, impl=None):
    """Dispatch to the selected backend; see ``_kernel_py.bellman_stage``."""
    return (impl or _impl).bellman_stage(*_prep(next_values, iv0, wv, is0, ws, it0, wt, cost, mask))


def standstill_sweep(values, best, iz, wait_cost, impl=None):
    (impl or _impl).standstill_sweep(values, best, int(iz), np.ascontiguousarray(wait_cost, dtype=np.float64))


def stage_masks(t_axis, dt, v_next, valid, depart_spat, arrive_spat, gap, forecast, snap, impl=None):
    """Dispatch to the selected backend; see ``_kernel_py.stage_masks``."""
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    fc = (float(forecast[0]), float(forecast[1]), f(forecast[2]), f(forecast[3]))
    return (impl or _impl).stage_masks(f(t_axis), f(dt), f(v_next), np.ascontiguousarray(valid, dtype=np.uint8),
                                       tuple(depart_spat), tuple(arrive_spat), tuple(gap), fc, float(snap))
