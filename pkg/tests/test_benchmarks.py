import math

import pytest

from milgraph import benchmarks
from milgraph.data import write_canonical_csv
from milgraph.synthetic import planted_bags


def test_missing_data_is_reported(tmp_path, monkeypatch):
    monkeypatch.delenv(benchmarks.DATA_ENV, raising=False)
    assert benchmarks.find_dataset("musk1") is None
    assert benchmarks.find_dataset("musk1", tmp_path) is None
    with pytest.raises(FileNotFoundError):
        benchmarks.run_benchmark("musk1", root=tmp_path)


def test_recipe_runs_on_stand_in_file(tmp_path, monkeypatch):
    write_canonical_csv(planted_bags(10, seed=0), tmp_path / "musk1.csv")
    monkeypatch.setenv(benchmarks.DATA_ENV, str(tmp_path))
    rep = benchmarks.run_benchmark("musk1", seed=4, epochs=1, repeats=1, folds=2, eta="p50", clusters=2)
    assert rep.train_config["seed"] == 4
    assert rep.train_config["batch_size"] == 16
    assert rep.model_config["clusters"] == 2
    assert len(rep.folds) == 2


def test_recipes_are_valid():
    assert set(benchmarks.RECIPES) == set(benchmarks.FILES)
    for mcfg, tcfg in benchmarks.RECIPES.values():
        mcfg.validate()
        tcfg.validate()
    assert math.inf in benchmarks.ETA_GRID
