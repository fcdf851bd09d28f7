import numpy as np
import pytest

from oodscore import ClassifierHead, FeatureDataset


def random_dataset(rng, n=None, d=None, k=None, with_logits=True, with_labels=True,
                   with_predicted=False):
    """Random valid dataset (+head) with f32/i32 storage dtypes."""
    n = n if n is not None else int(rng.integers(1, 65))
    d = d if d is not None else int(rng.integers(1, 33))
    k = k if k is not None else int(rng.integers(2, 17))
    features = rng.normal(size=(n, d)).astype(np.float32)
    W = rng.normal(size=(k, d)).astype(np.float32)
    bias = rng.normal(size=k).astype(np.float32)
    head = ClassifierHead(W=W, bias=bias)
    logits = (features.astype(np.float64) @ W.astype(np.float64).T
              + bias.astype(np.float64)).astype(np.float32) if with_logits else None
    labels = rng.integers(0, k, size=n).astype(np.int32) if with_labels else None
    predicted = (np.argmax(logits, axis=1).astype(np.int32)
                 if (with_predicted and with_logits) else None)
    dataset = FeatureDataset(features=features, num_classes=k, logits=logits,
                             labels=labels, predicted=predicted)
    return dataset, head


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
