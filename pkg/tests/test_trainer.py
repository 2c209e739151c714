import dataclasses
import hashlib

import numpy as np
import pytest

from conftest import nearest_class_mean_accuracy
from pkinet.data import FeatureDataset, SessionLayout, SessionStream, SynthSpec, make_synthetic_stream
from pkinet.ensemble import materialized_units
from pkinet.errors import ProtocolError
from pkinet.memory import ClassMeanMemory
from pkinet.model import forward_logits
from pkinet.nn import init_linear_rows, init_projector
from pkinet.rng import SplitMix64, derive
from pkinet.trainer import (
    TrainConfig,
    _begin_incremental,
    base_train,
    incremental_train,
    run_protocol,
)

FAST = dict(base_epochs=10, incr_iters=30)


def all_tensor_hashes(state):
    """sha256 of every parameter tensor and memory entry in the state."""
    out = {}
    for name, proj in materialized_units(state.ensemble):
        for tname, arr in proj.tensors().items():
            out[f"ens/{name}/{tname}"] = hashlib.sha256(arr.tobytes()).hexdigest()
    out["cls/W"] = hashlib.sha256(state.classifier.W.tobytes()).hexdigest()
    out["cls/b"] = hashlib.sha256(state.classifier.b.tobytes()).hexdigest()
    for cid, entry in state.memory.entries.items():
        out[f"mem/{cid}"] = hashlib.sha256(entry.mean.tobytes()).hexdigest()
    return out


# ---------------------------------------------------------------- base


def test_base_train_reaches_high_train_accuracy(small_stream):
    D0 = small_stream.sessions[0][0]
    cfg = TrainConfig(base_epochs=100, seed=3)
    state = base_train(D0, cfg)
    logits = forward_logits(state, D0.features)
    acc = float((np.argmax(logits, axis=1) == D0.labels).mean())
    assert acc >= 0.99
    # the separability claim itself is confirmed by the independent oracle
    assert nearest_class_mean_accuracy(small_stream, upto=0) >= 0.99


def test_base_train_creates_full_memory(small_stream):
    D0 = small_stream.sessions[0][0]
    state = base_train(D0, TrainConfig(seed=1, **FAST))
    assert len(state.memory) == 10
    assert state.memory.class_ids == list(range(10))
    assert state.session == 0
    assert state.ensemble.current_frozen


def test_base_train_zero_epochs_keeps_init_weights(small_stream):
    D0 = small_stream.sessions[0][0]
    cfg = TrainConfig(base_epochs=0, seed=9)
    state = base_train(D0, cfg)
    d = D0.d
    expected = init_projector(d, d, d, derive(9, "proj-init", 0))
    for key, arr in state.ensemble.current.tensors().items():
        assert np.array_equal(arr, expected.tensors()[key])
    assert np.array_equal(
        state.classifier.W, init_linear_rows(10, d, derive(9, "cls-init", 0))
    )
    assert np.all(state.classifier.b == 0.0)
    assert len(state.memory) == 10  # memory creation is unconditional


def test_base_train_requires_dense_labels():
    rng = SplitMix64(2)
    ds = FeatureDataset(features=rng.normal((6, 4)), labels=[1, 1, 2, 2, 3, 3])
    with pytest.raises(ProtocolError, match="dense"):
        base_train(ds, TrainConfig(**FAST))


def test_identical_config_gives_bit_identical_trajectory(small_stream):
    D0 = small_stream.sessions[0][0]
    cfg = TrainConfig(seed=17, **FAST)
    a = base_train(D0, cfg)
    b = base_train(D0, cfg)
    assert all_tensor_hashes(a) == all_tensor_hashes(b)
    a2 = incremental_train(a, small_stream.sessions[1][0], cfg)
    b2 = incremental_train(b, small_stream.sessions[1][0], cfg)
    assert all_tensor_hashes(a2) == all_tensor_hashes(b2)


def test_base_loss_decreases_on_separable_data(small_stream):
    D0 = small_stream.sessions[0][0]
    losses = []
    base_train(
        D0,
        TrainConfig(base_epochs=20, seed=3),
        on_epoch=lambda s: losses.append(s["mean_loss"]),
    )
    assert losses[-1] < losses[0]


# ---------------------------------------------------------------- incremental


def test_memory_grows_by_n_way_each_session(small_stream):
    cfg = TrainConfig(seed=5, **FAST)
    state = base_train(small_stream.sessions[0][0], cfg)
    for t in (1, 2, 3):
        state = incremental_train(state, small_stream.sessions[t][0], cfg)
        assert len(state.memory) == 10 + t * 2
        assert state.session == t
        assert state.classifier.n_classes == 10 + t * 2


def test_frozen_tensors_and_memory_never_change(small_stream):
    cfg = TrainConfig(seed=5, **FAST)
    state = base_train(small_stream.sessions[0][0], cfg)
    for t in (1, 2, 3):
        before = all_tensor_hashes(state)
        new_state = incremental_train(state, small_stream.sessions[t][0], cfg)
        after_old_view = all_tensor_hashes(state)
        assert before == after_old_view  # input state untouched
        after = all_tensor_hashes(new_state)
        # every old memory entry and frozen unit survives bit-identically;
        # only the classifier (and in pki mode nothing else frozen) changes
        for key, digest in before.items():
            if key.startswith("mem/"):
                assert after[key] == digest
            elif key.startswith("ens/frozen/"):
                assert after[key] == digest
        assert after["cls/W"] != before["cls/W"]
        state = new_state


def test_incremental_rejects_class_overlap(small_stream):
    cfg = TrainConfig(seed=5, **FAST)
    state = base_train(small_stream.sessions[0][0], cfg)
    with pytest.raises(ProtocolError, match="overlap"):
        incremental_train(state, small_stream.sessions[0][0], cfg)


def test_incremental_rejects_sparse_ids(small_stream):
    cfg = TrainConfig(seed=5, **FAST)
    state = base_train(small_stream.sessions[0][0], cfg)
    rng = SplitMix64(11)
    ds = FeatureDataset(features=rng.normal((4, 16)), labels=[50, 50, 51, 51])
    with pytest.raises(ProtocolError, match="densely"):
        incremental_train(state, ds, cfg)


def test_loss_decomposes_into_example_and_memory_sums(small_stream):
    cfg = TrainConfig(seed=7, base_epochs=5, incr_iters=1)
    state = base_train(small_stream.sessions[0][0], cfg)
    Dt = small_stream.sessions[1][0]
    stats = []
    incremental_train(state, Dt, cfg, on_iteration=stats.append)

    # independent accumulation over the identical pre-step parameters
    ens, cls, _ = _begin_incremental(state, Dt, cfg)
    means, ids = state.memory.as_arrays()

    def row_loss(f, y):
        from pkinet.ensemble import ensemble_forward

        v, _ = ensemble_forward(ens, f)
        vhat = v / np.linalg.norm(v)
        logits = cls.W @ vhat + cls.b
        z = logits - logits.max()
        return float(np.log(np.exp(z).sum()) - z[y])

    loss_ex = sum(row_loss(Dt.features[i], int(Dt.labels[i])) for i in range(Dt.n))
    loss_mem = sum(row_loss(means[i], int(ids[i])) for i in range(len(ids)))
    assert abs(stats[0]["loss_examples"] - loss_ex) < 1e-10
    assert abs(stats[0]["loss_memory"] - loss_mem) < 1e-10
    assert abs(stats[0]["loss_total"] - (loss_ex + loss_mem)) < 1e-10


def test_every_iteration_replays_every_memory_entry(small_stream):
    cfg = TrainConfig(seed=7, base_epochs=5, incr_iters=12)
    state = base_train(small_stream.sessions[0][0], cfg)
    stats = []
    state = incremental_train(
        state, small_stream.sessions[1][0], cfg, on_iteration=stats.append
    )
    assert len(stats) == 12
    assert all(s["n_memory_terms"] == 10 for s in stats)
    stats2 = []
    incremental_train(
        state, small_stream.sessions[2][0], cfg, on_iteration=stats2.append
    )
    assert all(s["n_memory_terms"] == 12 for s in stats2)


def test_mean_reduction_knob(small_stream):
    cfg = TrainConfig(seed=7, base_epochs=5, incr_iters=1, loss_reduction="mean")
    state = base_train(small_stream.sessions[0][0], cfg)
    stats = []
    incremental_train(
        state, small_stream.sessions[1][0], cfg, on_iteration=stats.append
    )
    # weighted terms are per-term means, so each is bounded by one row's CE
    assert stats[0]["loss_examples"] < 30.0
    assert stats[0]["n_memory_terms"] == 10


# ---------------------------------------------------------------- protocol


def test_protocol_base_only_stream(small_stream):
    stream = SessionStream(sessions=[small_stream.sessions[0]], layout=None)
    state, acc = run_protocol(stream, TrainConfig(seed=2, **FAST))
    assert acc.num_sessions == 1
    assert len(acc.per_session_per_origin[0]) == 1


def test_protocol_deterministic(small_stream):
    cfg = TrainConfig(seed=4, **FAST)
    _, acc1 = run_protocol(small_stream, cfg)
    _, acc2 = run_protocol(small_stream, cfg)
    assert acc1.per_session == acc2.per_session  # bit-identical floats
    assert acc1.per_session_per_origin == acc2.per_session_per_origin


def test_protocol_cifar_like_layout_gives_nine_sessions():
    # d must be large enough that no input deadens an entire ReLU layer
    # (an all-dead row at zero-bias init trips the degeneracy abort)
    layout = SessionLayout(base_classes=60, num_incremental=8, n_way=5, k_shot=5)
    spec = SynthSpec(d=16, layout=layout, train_per_base_class=2, test_per_class=1,
                     seed=0)
    stream = make_synthetic_stream(spec)
    cfg = TrainConfig(seed=0, base_epochs=2, incr_iters=3)
    state, acc = run_protocol(stream, cfg)
    assert acc.num_sessions == 9
    assert state.classifier.n_classes == 100
    assert len(state.memory) == 100


def test_protocol_classifier_rows_follow_label_space(small_stream):
    cfg = TrainConfig(seed=4, **FAST)
    rows = []
    run_protocol(
        small_stream, cfg, on_session=lambda t, s, a: rows.append(s.classifier.n_classes)
    )
    assert rows == [10, 12, 14, 16]


@pytest.mark.parametrize("mode,k", [("pkiv1", 3), ("pkiv2", 2)])
def test_protocol_runs_all_modes(small_stream, mode, k):
    cfg = TrainConfig(mode=mode, k=k, seed=4, **FAST)
    state, acc = run_protocol(small_stream, cfg)
    assert acc.num_sessions == 4
    assert all(0.0 <= a <= 1.0 for a in acc.per_session)


def test_resume_requires_matching_accuracy(small_stream):
    cfg = TrainConfig(seed=4, **FAST)
    state, acc = run_protocol(small_stream, cfg)
    with pytest.raises(ProtocolError):
        run_protocol(small_stream, cfg, resume_state=state, resume_accuracy=None)
