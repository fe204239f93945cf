import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from segcurate.mask_io import save_mask


def masks(max_side=16, min_side=1):
    shapes = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shapes.flatmap(lambda s: arrays(np.bool_, s))


def random_mask(rng, shape, density=0.5):
    return rng.random(shape) < density


def blobby_mask(rng, shape, n_blobs=3):
    """Union of random rectangles; closer to real lesion masks than noise."""
    h, w = shape
    m = np.zeros(shape, dtype=bool)
    for _ in range(n_blobs):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(1, max(2, h // 2)), x0 + rng.integers(1, max(2, w // 2))
        m[y0:y1, x0:x1] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_dataset(tmp_path):
    """Write {sample_id: [mask, ...]} as PNGs plus a manifest; return the manifest path."""

    def _write(samples, name="manifest.csv"):
        mask_dir = tmp_path / "masks"
        mask_dir.mkdir(exist_ok=True)
        lines = ["sample_id,image_path,mask_path"]
        for sid, ms in samples.items():
            for i, m in enumerate(ms):
                fname = f"{sid}_{i}.png"
                save_mask(m, mask_dir / fname)
                lines.append(f"{sid},images/{sid}.jpg,masks/{fname}")
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return path

    return _write


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
