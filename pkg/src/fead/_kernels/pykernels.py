"""Pure-numpy segment reductions (fallback for the compiled kernels).

Both backends accumulate strictly in element order so that results are
bitwise identical between them regardless of repeated segment ids.
"""

import numpy as np


def segment_sum(values, segments, num_segments):
    """Sum rows of ``values`` into ``out[segments[i]]``, in element order.

    values: float64 array of shape (E,) or (E, D); segments: int64 (E,).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    if values.ndim == 1:
        out = np.zeros(num_segments, dtype=np.float64)
    else:
        out = np.zeros((num_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, segments, values)
    return out


def segment_max(values, segments, num_segments, fill=-np.inf):
    """Per-segment maximum of a 1-D float64 array; empty segments get ``fill``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    out = np.full(num_segments, fill, dtype=np.float64)
    np.maximum.at(out, segments, values)
    return out
