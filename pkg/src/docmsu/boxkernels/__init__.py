"""Box-overlap kernels with a compiled fast path.

``pairwise_iou`` and ``nms`` come from the Cython extension when it was
built, otherwise from the numpy reference implementation. ``BACKEND`` names
the selection; both backends produce bit-identical results.
"""

from . import reference

try:
    from . import _fast as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built; numpy fallback
    _impl = reference
    BACKEND = "python"

pairwise_iou = _impl.pairwise_iou
nms = _impl.nms


def available_backends() -> dict[str, object]:
    """Importable backends keyed by name (for tests and benchmarks)."""
    out: dict[str, object] = {"python": reference}
    if BACKEND == "compiled":
        out["compiled"] = _impl
    return out


__all__ = ["pairwise_iou", "nms", "BACKEND", "available_backends", "reference"]
