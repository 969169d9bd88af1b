import json
import struct

import numpy as np
import pytest

from routecap.exceptions import CheckpointError, ContractError, DimensionError, NumericalError
from routecap.interpretation import GlobalStats
from routecap.model import MODES, Model, TrainConfig, check_decomposition, contribution_terms
from routecap.training import (MAGIC, evaluate, forward_dataset, load_checkpoint, read_checkpoint_header,
                               save_checkpoint, train)


def logits_of(model, pooled):
    return np.concatenate([out.logits.data for _, out in forward_dataset(model, pooled)])


# -- config and model -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(n_labels=2, dims={"a": 1, "v": 1, "t": 1}, mode="routing-star", iterations=2)
    with pytest.raises(ContractError):
        TrainConfig(n_labels=2, dims={"a": 1, "v": 1, "t": 1}, mode="capsule")
    with pytest.raises(ContractError):
        TrainConfig(n_labels=2, dims={"a": 1, "v": 1, "t": 1}, features=("a", "at"))
    c = TrainConfig(n_labels=2, dims={"a": 1, "v": 1, "t": 1}, mode="routing-star", iterations=1)
    assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_parameter_names_and_shapes(small_config):
    params = Model.init(small_config, np.random.default_rng(0)).parameters()
    assert params["route.W"].shape == (7, 3, 5, 4)
    assert params["head.o"].shape == (3, 4)
    assert params["enc.avt.weight"].shape == (9, 6)
    assert len(params) == 16


def test_gam_mode_never_routes(small_config, small_data):
    from routecap.routing import call_counts
    config = TrainConfig(**{**small_config.to_dict(), "mode": "gam", "dims": small_config.dims})
    model = Model.init(config, np.random.default_rng(0))
    before = call_counts["routing_adjust"]
    out = model.forward(small_data[0])
    assert call_counts["routing_adjust"] == before
    assert out.state is None and out.r is None
    with pytest.raises(ContractError):
        contribution_terms(out, model.readout)


def test_forward_checks_widths(small_config):
    model = Model.init(small_config, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        model.forward({"a": np.ones((2, 3)), "v": np.ones((2, 5)), "t": np.ones((2, 4))})


def test_decomposition_check_catches_corruption(small_config, small_data):
    model = Model.init(small_config, np.random.default_rng(0))
    out = model.forward(small_data[0])
    assert check_decomposition(out, model.readout) < 1e-12
    out.logits.data[0, 0] += 1e-3
    with pytest.raises(ContractError):
        check_decomposition(out, model.readout)


def test_feature_subset_model(small_config, small_data):
    config = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "features": ("a", "vt")})
    out = Model.init(config, np.random.default_rng(0)).forward(small_data[0])
    assert out.p.shape == (40, 2) and out.r.shape == (40, 2, 3)


# -- training ----------------------------------------------------------------------

@pytest.mark.parametrize("mode", MODES)
def test_training_reduces_loss(small_config, small_data, mode):
    iters = 1 if mode == "routing-star" else 2
    config = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "mode": mode,
                            "iterations": iters, "epochs": 15})
    _, log = train(config, *small_data)
    assert log.rows[-1]["loss"] < log.rows[0]["loss"]


def test_zero_epochs_returns_initialised_model(small_config, small_data):
    config = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "epochs": 0})
    ckpt, log = train(config, *small_data)
    assert log.rows == [] and ckpt.epoch == 0
    init = Model.init(config, np.random.default_rng(config.seed)).state_dict()
    assert all(np.array_equal(init[k], ckpt.params[k]) for k in init)


def test_training_is_deterministic(small_config, small_data):
    a, log_a = train(small_config, *small_data)
    b, log_b = train(small_config, *small_data)
    assert log_a.to_csv() == log_b.to_csv()
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_multilabel_training(small_config):
    g = np.random.default_rng(5)
    pooled = {m: g.standard_normal((30, d)) for m, d in small_config.dims.items()}
    y = (g.uniform(size=(30, 3)) < 0.4).astype(int)
    config = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "task": "multilabel"})
    ckpt, log = train(config, pooled, y)
    result = evaluate(ckpt, pooled, y)
    assert len(result.per_label["accuracy"]) == 3
    assert result.metrics["accuracy"] == log.rows[-1]["accuracy"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_is_reported(small_config, small_data):
    config = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "learning_rate": 1e300})
    with pytest.raises(NumericalError):
        train(config, *small_data)


def test_train_rejects_mismatched_targets(small_config, small_data):
    with pytest.raises(DimensionError):
        train(small_config, small_data[0], small_data[1][:5])
    with pytest.raises(ContractError):
        train(small_config, small_data[0], small_data[1] + 5)


# -- evaluation ----------------------------------------------------------------------

def test_evaluate_reproduces_logged_accuracy(small_config, small_data):
    ckpt, log = train(small_config, *small_data)
    result = evaluate(ckpt, *small_data)
    assert abs(result.metrics["accuracy"] - log.rows[-1]["accuracy"]) < 1e-12
    assert result.to_dict() == evaluate(ckpt, *small_data).to_dict()
    assert sum(map(sum, result.confusion)) == 40


def test_evaluate_empty_is_error(small_config, small_data):
    ckpt, _ = train(small_config, *small_data)
    empty = {m: np.zeros((0, d)) for m, d in small_config.dims.items()}
    with pytest.raises(ContractError):
        evaluate(ckpt, empty, np.zeros(0, dtype=int))


def test_evaluate_sentiment_metrics():
    config = TrainConfig(n_labels=7, dims={"a": 2, "v": 2, "t": 2}, d_f=4, d_c=4, epochs=1, seed=1)
    g = np.random.default_rng(0)
    pooled = {m: g.standard_normal((50, 2)) for m in "avt"}
    y = g.integers(0, 7, 50)
    ckpt, _ = train(config, pooled, y)
    m = evaluate(ckpt, pooled, y, label_kind="sentiment").metrics
    assert set(m) == {"accuracy", "acc7", "acc2", "f1"}
    assert m["acc2"] >= 0 and m["acc7"] == m["accuracy"]


def test_evaluate_streams_global_stats(small_config, small_data):
    ckpt, _ = train(small_config, *small_data)
    stats = GlobalStats(list(small_config.features), 3, "true-label")
    evaluate(ckpt, *small_data, stats=stats)
    np.testing.assert_array_equal(stats.r.n[0], np.bincount(small_data[1], minlength=3))
    gam = TrainConfig(**{**small_config.to_dict(), "dims": small_config.dims, "mode": "gam"})
    with pytest.raises(ContractError):
        evaluate(train(gam, *small_data)[0], *small_data, stats=GlobalStats(list(gam.features), 3))


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_round_trip_is_bitwise(tmp_path, small_config, small_data):
    ckpt, _ = train(small_config, *small_data)
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == ckpt.config and back.epoch == ckpt.epoch
    assert back.rng_state == ckpt.rng_state
    assert logits_of(back.model(), small_data[0]).tobytes() == logits_of(ckpt.model(), small_data[0]).tobytes()


def test_checkpoint_header_only(tmp_path, small_config, small_data):
    ckpt, _ = train(small_config, *small_data)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack("<Q", raw[8:16])
    # the header reader works even when the tensor payload is cut off
    (tmp_path / "head.ckpt").write_bytes(raw[:16 + hlen])
    header = read_checkpoint_header(tmp_path / "head.ckpt")
    assert TrainConfig.from_dict(header["config"]) == small_config
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "head.ckpt")


@pytest.mark.parametrize("cut", [3, 12, 40, -1])
def test_truncated_checkpoint(tmp_path, small_config, small_data, cut):
    ckpt, _ = train(small_config, *small_data)
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(raw[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")


def test_bad_magic_and_version(tmp_path, small_config, small_data):
    (tmp_path / "junk.ckpt").write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.ckpt")
    ckpt, _ = train(small_config, *small_data)
    save_checkpoint(ckpt, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    header["format_version"] = 99
    body = json.dumps(header).encode()
    (tmp_path / "v99.ckpt").write_bytes(raw[:8] + struct.pack("<Q", len(body)) + body + raw[16 + hlen:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v99.ckpt")
