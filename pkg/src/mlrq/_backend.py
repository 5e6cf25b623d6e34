"""Kernel selection.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Set ``MLRQ_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

from mlrq import _fallback

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("MLRQ_PURE_PYTHON", "") not in ("", "0"):
        return _fallback
    try:
        from mlrq import _kernels
    except ImportError as exc:  # extension not built
        log.debug("compiled kernels unavailable (%s); using fallback", exc)
        return _fallback
    return _kernels


kernels = _load()
backend_name = kernels.name


def num_threads():
    """Thread cap from ``MLRQ_THREADS`` (default: all cores)."""
    raw = os.environ.get("MLRQ_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring invalid MLRQ_THREADS=%r", raw)
    return os.cpu_count() or 1


def refine_nearest(X, C, scores, thresh, impl=None):
    impl = impl or kernels
    if impl is _fallback:
        return impl.refine_nearest(X, C, scores, thresh)
    return impl.refine_nearest(X, C, scores, thresh, num_threads())
