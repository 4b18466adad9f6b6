import numpy as np

from fixclr import RepresentationBatch


def random_representation_batch(rng, n_max=64, d_max=5, c_max=8, p=6,
                                eligibility_rate=0.85):
    """Random unit vectors with random domain/class ids and eligibility."""
    n = int(rng.integers(4, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    c = int(rng.integers(2, c_max + 1))
    vectors = rng.standard_normal((n, p))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return RepresentationBatch(
        vectors,
        rng.integers(0, d, n),
        rng.integers(0, c, n),
        rng.random(n) < eligibility_rate,
    )
