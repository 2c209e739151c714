import numpy as np
import pytest

from pkinet.data import SessionLayout, SynthSpec, make_synthetic_stream


@pytest.fixture(scope="session")
def small_stream():
    """Well-separated 10-base / 3x2-way 3-shot stream, cheap to train on."""
    layout = SessionLayout(base_classes=10, num_incremental=3, n_way=2, k_shot=3)
    spec = SynthSpec(
        d=16,
        layout=layout,
        cluster_std=0.1,
        center_scale=5.0,
        train_per_base_class=20,
        test_per_class=10,
        seed=3,
    )
    return make_synthetic_stream(spec)


def nearest_class_mean_accuracy(stream, upto=None):
    """Independent oracle: classify test features by nearest train-mean."""
    sessions = stream.sessions if upto is None else stream.sessions[: upto + 1]
    means = {}
    for train, _ in sessions:
        for c in train.classes:
            means[int(c)] = train.features[train.labels == c].mean(axis=0)
    M = np.stack([means[c] for c in sorted(means)])
    ids = np.array(sorted(means))
    correct = total = 0
    for _, test in sessions:
        d2 = ((test.features[:, None, :] - M[None, :, :]) ** 2).sum(axis=-1)
        pred = ids[d2.argmin(axis=1)]
        correct += int((pred == test.labels).sum())
        total += test.n
    return correct / total
