from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from milgraph.data import Bag
from milgraph.interpret import (
    ExplanationRecord,
    collect_explanations,
    gray_levels,
    pgm_text,
    read_explanation_csv,
    write_explanation_csv,
    write_heatmap,
)
from milgraph.model import ModelConfig
from milgraph.synthetic import planted_bags
from milgraph.train import TrainConfig, train_one_model

FIXTURES = Path(__file__).parent / "fixtures"


def test_gray_level_examples():
    assert gray_levels([[0.5]])[0, 0] == 128
    np.testing.assert_array_equal(gray_levels([[0.0, 1.0]]), [[0, 255]])
    np.testing.assert_array_equal(gray_levels([[0.2, 0.4]], stretch=True), [[0, 255]])
    np.testing.assert_array_equal(gray_levels([[0.3, 0.3]], stretch=True), [[0, 0]])


def test_pgm_matches_fixture_bytes():
    text = pgm_text([[0.0, 0.5, 1.0], [0.1, 0.2, 0.9]])
    assert text.encode("ascii") == (FIXTURES / "heatmap_2x3.pgm").read_bytes()


def _record(weights, bag_id="b"):
    w = np.asarray(weights, dtype=float)
    return ExplanationRecord(bag_id, 1, 1, w, np.log(w + 1e-3), "assignment")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)), elements=st.floats(0, 1)))
def test_explanation_csv_round_trip(tmp_path_factory, w):
    path = tmp_path_factory.mktemp("csv") / "e.csv"
    write_explanation_csv([_record(w, "x"), _record(w[::-1], "y")], path)
    back = read_explanation_csv(path)
    np.testing.assert_allclose(back["x"], w, atol=1e-12, rtol=0)
    np.testing.assert_allclose(back["y"], w[::-1], atol=1e-12, rtol=0)


def test_heatmap_is_clusters_by_instances(tmp_path):
    rec = _record([[1.0, 0.0], [0.25, 0.75], [0.5, 0.5]])
    pgm, csv_path, scores = write_heatmap(rec, tmp_path / "b.pgm")
    lines = pgm.read_text().splitlines()
    assert lines[:3] == ["P2", "3 2", "255"]
    assert lines[3] == "255 64 128"
    np.testing.assert_array_equal(read_explanation_csv(csv_path)["b"], rec.weights)
    assert scores.exists()


def test_heatmap_unwritable_path_raises(tmp_path):
    with pytest.raises(OSError):
        write_heatmap(_record([[1.0]]), tmp_path / "missing" / "b.pgm")


def _tiny_model(config, bags):
    return train_one_model(bags, config, TrainConfig(epochs=2, batch_size=4, lr=1e-2))


def test_single_cluster_assignment_is_all_ones():
    bags = planted_bags(6, seed=1).bags
    model = _tiny_model(ModelConfig(clusters=1), bags)
    for rec, bag in zip(collect_explanations(model, bags), bags):
        assert rec.weights.shape == (bag.size, 1)
        np.testing.assert_array_equal(rec.weights, 1.0)


def test_single_instance_bag_explanations():
    bags = planted_bags(6, seed=2).bags
    lone = Bag("lone", 1, np.ones((1, 4)))
    for cfg in (ModelConfig(clusters=2, eta=1.0), ModelConfig(pool="attention")):
        rec = collect_explanations(_tiny_model(cfg, bags), [lone])[0]
        np.testing.assert_allclose(rec.weights.sum(axis=1), 1.0, atol=1e-12)
        assert rec.weights.shape[0] == 1


def test_attention_records_sum_to_one():
    bags = planted_bags(6, seed=3).bags
    recs = collect_explanations(_tiny_model(ModelConfig(pool="attention"), bags), bags)
    for rec, bag in zip(recs, bags):
        assert rec.kind == "attention"
        assert rec.weights.shape == (bag.size, 1)
        assert rec.weights.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.slow
def test_planted_instances_share_a_cluster():
    ds = planted_bags(16, seed=0)
    model = train_one_model(ds.bags, ModelConfig(clusters=2, eta="p50"),
                            TrainConfig(epochs=100, batch_size=8, lr=1e-2))
    assert np.array_equal(model.predict(ds.bags), ds.labels)
    winners = set()
    for rec, bag in zip(collect_explanations(model, ds.bags), ds.bags):
        np.testing.assert_allclose(rec.weights.sum(axis=1), 1.0, atol=1e-12)
        if bag.label:
            planted = rec.weights[bag.instance_labels == 1]
            # two planted points form their own neighbourhood, so rows coincide
            np.testing.assert_allclose(planted[0], planted[1], atol=1e-12)
            winners.add(int(planted[0].argmax()))
    assert len(winners) == 1
