import numpy as np
import pytest

from splatsim.gaussian_scene import Scene


def random_scene(n, rng, frame="arbitrary", float32=True):
    """Random but well-formed scene; float32-representable values by default
    so PLY round-trips are exact."""
    centers = rng.uniform(-5, 5, (n, 3))
    log_scales = np.log(rng.uniform(0.02, 0.5, (n, 3)))
    rotations = rng.standard_normal((n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    opac = rng.uniform(-3, 5, n)
    sh_dc = rng.uniform(-1.5, 1.5, (n, 3))
    sh_rest = 0.1 * rng.standard_normal((n, 45))
    arrays = [centers, log_scales, rotations, opac, sh_dc, sh_rest]
    if float32:
        arrays = [a.astype(np.float32).astype(np.float64) for a in arrays]
    return Scene(*arrays, frame=frame)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
