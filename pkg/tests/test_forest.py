import numpy as np
import pytest
from app.arena import EnvKind, KinematicArena
from app.errors import ArtifactError, ConfigurationError
from app.forest import (
    MAX_DEPTH,
    N_TREES,
    Dataset,
    ForestModel,
    Tree,
    collect_dataset,
    dump_forest,
    fit,
    holdout_accuracy,
    label_trajectories,
    load_forest,
    predict,
    predict_many,
    read_dataset,
    split_dataset,
    write_dataset,
)
from app.hddqn import ScriptedPusher


@pytest.fixture
def separable(rng):
    """Label 1 exactly when the first feature is positive."""
    states = rng.normal(size=(400, 10))
    labels = (states[:, 0] > 0.0).astype(int)
    return Dataset(states, labels)


class TestFit:
    """Fitting and voting."""

    def test_learns_threshold(self, separable, rng):
        """A one-feature threshold is learned to high held-out accuracy."""
        training, testing = split_dataset(separable, 0.25, rng)
        model = fit(training, seed=0)
        assert len(model.trees) == N_TREES
        assert holdout_accuracy(model, testing) > 0.85

    def test_shuffled_labels_are_chance(self, separable, rng):
        """With labels shuffled away from the states held-out accuracy is near a coin flip."""
        shuffled = Dataset(separable.states, rng.permutation(separable.labels))
        training, testing = split_dataset(shuffled, 0.25, rng)
        model = fit(training, seed=0)
        assert 0.3 < holdout_accuracy(model, testing) < 0.7

    def test_depth_limit(self, separable):
        """No tree grows past the depth limit."""
        model = fit(separable, seed=0)
        assert model.max_depth() <= MAX_DEPTH

    def test_same_seed_same_forest(self, separable):
        """Fitting is deterministic for a seed."""
        first = fit(separable, seed=3)
        second = fit(separable, seed=3)
        assert np.array_equal(
            predict_many(first, separable.states), predict_many(second, separable.states)
        )

    def test_single_class(self, caplog):
        """A dataset with one label gives a constant model and a warning."""
        dataset = Dataset(np.zeros((5, 10)), np.ones(5, dtype=int))
        model = fit(dataset, seed=0)
        assert predict(model, np.zeros(10)) == (1, 1.0)
        assert "only label 1" in caplog.text

    def test_empty(self):
        """An empty dataset cannot be fitted."""
        with pytest.raises(ConfigurationError):
            fit(Dataset.empty(), seed=0)

    def test_tie_predicts_infeasible(self):
        """An even split of votes predicts 0."""
        model = ForestModel([Tree.constant(1), Tree.constant(0)], 10)
        assert predict(model, np.zeros(10)) == (0, 0.5)


class TestDataset:
    """Labelling, splitting and the dataset file."""

    def test_labels_follow_outcome(self):
        """Every state of a trajectory takes the trajectory's outcome."""
        dataset = label_trajectories(
            [([np.zeros(10), np.ones(10)], True), ([np.full(10, 2.0)], False)]
        )
        assert dataset.labels.tolist() == [1, 1, 0]
        assert dataset.states.shape == (3, 10)

    def test_split_sizes(self, separable, rng):
        """The held-out share is rounded from the fraction."""
        training, testing = split_dataset(separable, 0.2, rng)
        assert len(training) == 320
        assert len(testing) == 80

    def test_dataset_file(self, tmp_path):
        """States and labels survive the CSV file."""
        dataset = Dataset(np.array([[0.5] * 10, [-1.25] * 10]), np.array([1, 0]))
        path = tmp_path / "dataset.csv"
        write_dataset(path, dataset)
        loaded = read_dataset(path)
        assert np.array_equal(loaded.states, dataset.states)
        assert loaded.labels.tolist() == [1, 0]

    def test_bad_dataset_file(self, tmp_path):
        """Files without a label column are rejected."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ArtifactError):
            read_dataset(path)

    def test_collect(self, rng):
        """Collection keeps rolling out until enough states are labelled."""
        dataset = collect_dataset(
            ScriptedPusher(), lambda kind: KinematicArena(), 30, rng, kinds=(EnvKind.FLAT,)
        )
        assert len(dataset) >= 30
        assert set(dataset.labels.tolist()) <= {0, 1}


class TestForestFile:
    """The text forest format."""

    def test_reload_predicts_identically(self, separable, tmp_path):
        """A reloaded forest votes exactly like the fitted one."""
        model = fit(separable, seed=0)
        path = tmp_path / "forest.txt"
        dump_forest(model, path)
        loaded = load_forest(path)
        assert loaded.n_features == 10
        for state in separable.states[:50]:
            assert predict(loaded, state) == predict(model, state)

    def test_header_checked(self, tmp_path):
        """A file that does not start with a forest header is rejected."""
        path = tmp_path / "forest.txt"
        path.write_text("tree 1\nleaf 0\n")
        with pytest.raises(ArtifactError):
            load_forest(path)

    def test_truncated(self, tmp_path):
        """A tree cut off before its leaves is rejected."""
        path = tmp_path / "forest.txt"
        path.write_text("forest 1 10\ntree 3\nsplit 0 0.5\nleaf 0\n")
        with pytest.raises(ArtifactError):
            load_forest(path)

    def test_preorder(self):
        """Trees are written node, left subtree, right subtree."""
        tree = Tree.from_preorder([("split", 2, 0.5), ("leaf", 0), ("leaf", 1)])
        assert tree.preorder() == ["split 2 0.5", "leaf 0", "leaf 1"]
        assert tree.predict(np.array([0, 0, 0.4])) == 0
        assert tree.predict(np.array([0, 0, 0.6])) == 1
        assert tree.depth() == 1
