import os

import numpy as np
import pytest

from fead._kernels import active_backend, pykernels

try:
    from fead._kernels import _ckernels
except ImportError:
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _cases(seed, trials=50):
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n = int(rng.integers(1, 12))
        e = int(rng.integers(0, 60))
        values = rng.normal(size=e)
        rows = rng.normal(size=(e, int(rng.integers(1, 6))))
        segments = rng.integers(0, n, size=e)
        yield n, values, rows, segments


def test_segment_sum_matches_loop_reference():
    for n, values, rows, segments in _cases(0):
        expected = np.zeros(n)
        for v, s in zip(values, segments):
            expected[s] += v
        assert np.allclose(pykernels.segment_sum(values, segments, n), expected,
                           atol=1e-12)
        expected2 = np.zeros((n, rows.shape[1]))
        for r, s in zip(rows, segments):
            expected2[s] += r
        assert np.allclose(pykernels.segment_sum(rows, segments, n), expected2,
                           atol=1e-12)


def test_segment_max_matches_loop_reference():
    for n, values, _, segments in _cases(1):
        expected = np.full(n, -np.inf)
        for v, s in zip(values, segments):
            expected[s] = max(expected[s], v)
        got = pykernels.segment_max(values, segments, n)
        assert np.array_equal(got, expected)


@needs_ext
def test_backends_agree_bitwise():
    # both backends accumulate in element order, so even float rounding
    # must be identical
    for n, values, rows, segments in _cases(2, trials=100):
        assert np.array_equal(
            pykernels.segment_sum(values, segments, n),
            _ckernels.segment_sum(values, segments, n))
        assert np.array_equal(
            pykernels.segment_sum(rows, segments, n),
            _ckernels.segment_sum(rows, segments, n))
        assert np.array_equal(
            pykernels.segment_max(values, segments, n),
            _ckernels.segment_max(values, segments, n))


@needs_ext
def test_extension_is_the_default_backend():
    if os.environ.get("FEAD_KERNELS", "auto") != "auto":
        pytest.skip("backend forced by FEAD_KERNELS")
    assert active_backend() == "cython"


def test_forced_backend_env(tmp_path):
    import subprocess
    import sys
    code = ("import fead._kernels as k; print(k.active_backend())")
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "FEAD_KERNELS": "python"},
        capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_gat_forward_identical_across_backends():
    import numpy as np

    from fead.detector.features import FeatureTransform
    from fead.detector.gat import TrainConfig, _forward, init_model
    rng = np.random.default_rng(5)
    cfg = TrainConfig(heads=2, hidden_dim=4, dropout=0.0, seed=3)
    model = init_model(2, ("a", "b", "c"), cfg,
                       FeatureTransform(np.zeros(4), np.ones(4)), "zero")
    n = 8
    X = rng.normal(size=(n, model.input_dim))
    pairs = sorted({(int(rng.integers(0, n)), int(rng.integers(0, n)))
                    for _ in range(20)} | {(i, i) for i in range(n)},
                   key=lambda p: (p[1], p[0]))
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)

    import fead.detector.gat as gat
    logits_c, _ = _forward(model, X, src, dst)
    saved_sum, saved_max = gat.segment_sum, gat.segment_max
    try:
        gat.segment_sum = pykernels.segment_sum
        gat.segment_max = pykernels.segment_max
        logits_py, _ = _forward(model, X, src, dst)
    finally:
        gat.segment_sum = saved_sum
        gat.segment_max = saved_max
    assert np.array_equal(logits_c, logits_py)
