import numpy as np
import pytest

from oodcal.dataset import make_embedding_set
from oodcal.grood_core import OODPriorConfig, fit_grood
from oodcal.linear_probe import LPTrainConfig, train_lp
from oodcal.nearest_mean import fit_nm


def gaussian_blobs(means, sigma, count_per_class, seed=0, labels=None):
    """Labeled Gaussian clusters around the given mean rows."""
    means = np.asarray(means, dtype=np.float64)
    rng = np.random.default_rng(seed)
    vecs, labs = [], []
    for k, m in enumerate(means):
        s = sigma[k] if np.ndim(sigma) else sigma
        vecs.append(m + s * rng.standard_normal((count_per_class, means.shape[1])))
        labs.append(np.full(count_per_class, k if labels is None else labels[k]))
    return make_embedding_set(np.vstack(vecs), np.concatenate(labs))


def axis_means(k, dim, scale):
    """k well-separated class means along the first k coordinate axes."""
    means = np.zeros((k, dim))
    for i in range(k):
        means[i, i] = scale
    return means


@pytest.fixture(scope="session")
def small_pipeline():
    """3-class, 6-D fitted pipeline shared by detector-level tests."""
    means = axis_means(3, 6, 6.0)
    train = gaussian_blobs(means, 0.8, 200, seed=11)
    test = gaussian_blobs(means, 0.8, 300, seed=12)
    lp = train_lp(train, LPTrainConfig(l2_strength=1e-3, seed=0))
    nm = fit_nm(train)
    model = fit_grood(lp, nm, train, OODPriorConfig(mc_samples=20_000, seed=5))
    return {"train": train, "test": test, "lp": lp, "nm": nm, "model": model,
            "means": means}
