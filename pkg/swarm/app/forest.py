"""Push-feasibility classifier.

Trees are fitted with scikit-learn and exported into a flat preorder representation
that this module owns: prediction, voting and the text file format never go back
through scikit-learn, so a saved forest predicts identically after a reload.

Text format, one token line per record::

    forest <tree count> <feature count>
    tree <node count>
    split <feature index> <threshold>
    leaf <class>

Each tree is written in preorder (node, left subtree, right subtree). A sample goes
left when ``x[feature] <= threshold``.
"""

import csv
import logging
import time
import warnings
from dataclasses import dataclass

import numpy as np
from app.arena import EnvKind
from app.errors import ArtifactError, ConfigurationError
from app.hddqn import rollout
from sklearn.ensemble import RandomForestClassifier

logger = logging.getLogger(__name__)

N_TREES = 100
MAX_DEPTH = 10
MAX_FEATURES = 4
LEAF = -1
STATE_COLUMNS = [f"s{i}" for i in range(10)]


@dataclass
class Dataset:
    states: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, n_features=10):
        return cls(np.zeros((0, n_features)), np.zeros(0, dtype=int))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    @classmethod
    def constant(cls, label):
        return cls(
            np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]), np.array([label])
        )

    def __len__(self):
        return len(self.feature)

    def predict(self, x):
        node = 0
        while self.feature[node] != LEAF:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return int(self.leaf_class[node])

    def depth(self):
        deepest = 0
        stack = [(0, 0)]
        while stack:
            node, level = stack.pop()
            deepest = max(deepest, level)
            if self.feature[node] != LEAF:
                stack.append((self.left[node], level + 1))
                stack.append((self.right[node], level + 1))
        return deepest

    def preorder(self):
        lines = []

        def visit(node):
            if self.feature[node] == LEAF:
                lines.append(f"leaf {int(self.leaf_class[node])}")
                return
            lines.append(f"split {int(self.feature[node])} {float(self.threshold[node])!r}")
            visit(self.left[node])
            visit(self.right[node])

        visit(0)
        return lines

    @classmethod
    def from_preorder(cls, records):
        """records: list of ("split", feature, threshold) / ("leaf", class) tuples."""
        feature, threshold, left, right, leaf_class = [], [], [], [], []
        position = 0

        def build():
            nonlocal position
            if position >= len(records):
                raise ArtifactError("tree record ends before its last leaf")
            record = records[position]
            position += 1
            index = len(feature)
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            leaf_class.append(0)
            if record[0] == "leaf":
                leaf_class[index] = record[1]
                return index
            feature[index] = record[1]
            threshold[index] = record[2]
            left[index] = build()
            right[index] = build()
            return index

        build()
        if position != len(records):
            raise ArtifactError("tree record has trailing nodes")
        return cls(
            np.array(feature, dtype=int),
            np.array(threshold, dtype=float),
            np.array(left, dtype=int),
            np.array(right, dtype=int),
            np.array(leaf_class, dtype=int),
        )


@dataclass
class ForestModel:
    trees: list
    n_features: int

    def max_depth(self):
        return max(tree.depth() for tree in self.trees)


def _export_tree(estimator, classes):
    """Convert a fitted sklearn tree to a preorder Tree with class labels at leaves."""
    source = estimator.tree_
    records = []

    def visit(node):
        if source.children_left[node] == LEAF:
            records.append(("leaf", int(classes[int(np.argmax(source.value[node][0]))])))
            return
        records.append(("split", int(source.feature[node]), float(source.threshold[node])))
        visit(source.children_left[node])
        visit(source.children_right[node])

    visit(0)
    return Tree.from_preorder(records)


def label_trajectories(rollouts):
    """Every state of a successful trajectory gets label 1, of a failed one label 0.

    `rollouts` holds (states, success) pairs.
    """
    states, labels = [], []
    for trajectory, success in rollouts:
        for state in trajectory:
            states.append(np.asarray(state, dtype=float))
            labels.append(1 if success else 0)
    if not states:
        return Dataset.empty()
    return Dataset(np.stack(states), np.array(labels, dtype=int))


def fit(dataset, seed):
    if len(dataset) == 0:
        raise ConfigurationError("cannot fit a classifier on an empty dataset")
    n_features = dataset.states.shape[1]

    classes = np.unique(dataset.labels)
    if len(classes) == 1:
        label = int(classes[0])
        logger.warning(f"Dataset holds only label {label}; using a constant classifier")
        return ForestModel([Tree.constant(label) for _ in range(N_TREES)], n_features)

    logger.info(f"Starting classifier fit on {len(dataset)} samples")
    start = time.time()
    model = RandomForestClassifier(
        n_estimators=N_TREES,
        max_depth=MAX_DEPTH,
        max_features=min(MAX_FEATURES, n_features),
        criterion="gini",
        bootstrap=True,
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        model.fit(dataset.states, dataset.labels)
    forest = ForestModel([_export_tree(e, model.classes_) for e in model.estimators_], n_features)
    logger.info(f"Classifier fit completed in {time.time() - start:.2f} seconds")
    return forest


def predict(model, state):
    """Majority vote; returns (label, fraction of trees voting 1). A tie predicts 0."""
    # thresholds were learned on float32 features
    x = np.asarray(state, dtype=np.float32)
    votes = sum(tree.predict(x) for tree in model.trees)
    fraction = votes / len(model.trees)
    return (1 if fraction > 0.5 else 0), fraction


def predict_many(model, states):
    return np.array([predict(model, s)[0] for s in np.atleast_2d(states)], dtype=int)


def holdout_accuracy(model, dataset):
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(predict_many(model, dataset.states) == dataset.labels))


def split_dataset(dataset, fraction, rng):
    """Shuffle and split off `fraction` of the samples; returns (train, test)."""
    order = rng.permutation(len(dataset))
    cut = len(dataset) - int(round(fraction * len(dataset)))
    train_idx, test_idx = order[:cut], order[cut:]
    return (
        Dataset(dataset.states[train_idx], dataset.labels[train_idx]),
        Dataset(dataset.states[test_idx], dataset.labels[test_idx]),
    )


def collect_dataset(controller, arena_factory, min_samples, rng, kinds=tuple(EnvKind)):
    """Roll the controller out over the env kinds in turn until enough states are labelled."""
    logger.info(f"Starting dataset collection for {min_samples} samples")
    start = time.time()
    rollouts = []
    count = 0
    episode = 0
    while count < min_samples:
        kind = EnvKind(kinds[episode % len(kinds)])
        trajectory = rollout(controller, arena_factory(kind), kind, rng)
        rollouts.append((trajectory.observations, trajectory.success))
        count += len(trajectory.observations)
        episode += 1
    dataset = label_trajectories(rollouts)
    positives = int(dataset.labels.sum())
    logger.info(
        f"Dataset collection completed in {time.time() - start:.2f} seconds: "
        f"{episode} episodes, {len(dataset)} samples, {positives} labelled feasible"
    )
    return dataset


def write_dataset(path, dataset):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(STATE_COLUMNS[: dataset.states.shape[1]] + ["label"])
        for state, label in zip(dataset.states, dataset.labels):
            writer.writerow([repr(float(v)) for v in state] + [int(label)])


def read_dataset(path):
    try:
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as e:
        raise ArtifactError(f"cannot read dataset {path}: {e}") from e
    if not rows or rows[0][-1] != "label":
        raise ArtifactError(f"{path} is not a dataset file")
    body = rows[1:]
    if not body:
        return Dataset.empty(len(rows[0]) - 1)
    try:
        states = np.array([[float(v) for v in row[:-1]] for row in body])
        labels = np.array([int(row[-1]) for row in body], dtype=int)
    except ValueError as e:
        raise ArtifactError(f"malformed dataset row in {path}: {e}") from e
    return Dataset(states, labels)


def dump_forest(model, path):
    with open(path, "w") as handle:
        handle.write(f"forest {len(model.trees)} {model.n_features}\n")
        for tree in model.trees:
            handle.write(f"tree {len(tree)}\n")
            for line in tree.preorder():
                handle.write(line + "\n")


def load_forest(path):
    try:
        with open(path) as handle:
            lines = [line.split() for line in handle if line.strip()]
    except OSError as e:
        raise ArtifactError(f"cannot read forest {path}: {e}") from e
    if not lines or lines[0][0] != "forest" or len(lines[0]) != 3:
        raise ArtifactError(f"{path} is not a forest file")

    n_trees, n_features = int(lines[0][1]), int(lines[0][2])
    trees = []
    cursor = 1
    try:
        for _ in range(n_trees):
            tag, count = lines[cursor]
            if tag != "tree":
                raise ArtifactError(f"expected a tree header at record {cursor}")
            cursor += 1
            records = []
            for tokens in lines[cursor : cursor + int(count)]:
                if tokens[0] == "leaf":
                    records.append(("leaf", int(tokens[1])))
                elif tokens[0] == "split":
                    records.append(("split", int(tokens[1]), float(tokens[2])))
                else:
                    raise ArtifactError(f"unknown record {tokens[0]!r}")
            cursor += int(count)
            trees.append(Tree.from_preorder(records))
    except (IndexError, ValueError) as e:
        raise ArtifactError(f"truncated or malformed forest file {path}: {e}") from e
    return ForestModel(trees, n_features)
