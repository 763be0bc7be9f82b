import numpy as np
import pytest

from itmdetect.perturb import encode_png


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in str(report.nodeid) or report.skipped:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {status} ({report.duration:.2f}s)", flush=True)


def make_photo(height=120, width=160, seed=0):
    """A deterministic photo-like image: smooth cosine fields per channel
    with mild texture, values in [0, 1].  Smooth enough that JPEG behaves
    like it does on natural content."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    img = np.zeros((height, width, 3))
    for c in range(3):
        for _ in range(4):
            fx = rng.uniform(0.005, 0.08)
            fy = rng.uniform(0.005, 0.08)
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
        img[..., c] += 0.15 * rng.standard_normal((height, width))
    img -= img.min()
    img /= img.max()
    return img


@pytest.fixture(scope="session")
def photo():
    return make_photo()


@pytest.fixture
def photo_dir(tmp_path):
    """A directory containing one PNG of the fixture photo."""
    d = tmp_path / "photos"
    d.mkdir()
    (d / "shot.png").write_bytes(encode_png(make_photo()))
    return d
