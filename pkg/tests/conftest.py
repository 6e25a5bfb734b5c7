import os
import sys

import numpy as np
import pytest

# Add the code directory to Python path for Docker container
sys.path.insert(0, "/code")
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__)), "swarm"))

from app import create_app  # noqa: E402
from app.extensions import db  # noqa: E402
from app.scenarios import load_scenario  # noqa: E402
from app.world import (  # noqa: E402
    AgentRecord,
    AtNode,
    BoxRecord,
    EdgeRecord,
    HoleRecord,
    NodeRecord,
    WorldGraph,
)


@pytest.fixture
def app(tmp_path):
    """Create application for testing against a throwaway SQLite file."""
    output_dir = tmp_path / "output"
    app = create_app(
        {
            "TESTING": True,
            "OUTPUT_DIR": str(output_dir),
            "SQLALCHEMY_DATABASE_URI": f"sqlite:///{tmp_path / 'swarm.db'}",
        }
    )

    with app.app_context():
        yield app
        db.session.remove()
        db.engine.dispose()


@pytest.fixture
def client(app):
    """Create test client."""
    return app.test_client()


@pytest.fixture
def runner(app):
    """Create test CLI runner."""
    return app.test_cli_runner()


@pytest.fixture
def sanity_spec():
    return load_scenario("sanity")


@pytest.fixture
def sanity_world(sanity_spec):
    """Fresh sanity world: holes at n3 (depth 1) and n7 (depth 3), boxes at n1 and n2."""
    return sanity_spec.build_world()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def line_world(n, holes=(), boxes=(), agents=(0,), goal=None, spacing=1.0):
    """Nodes 0..n-1 on the x axis joined in a chain.

    holes: (node, depth) pairs, boxes: (node, height) pairs, agents: start nodes.
    """
    hole_ids = {node: i for i, (node, _) in enumerate(holes)}
    nodes = [NodeRecord(i, (i * spacing, 0.0, 0.0), hole_ids.get(i)) for i in range(n)]
    edges = [EdgeRecord(frozenset((i, i + 1)), spacing) for i in range(n - 1)]
    hole_records = [HoleRecord(i, node, depth) for i, (node, depth) in enumerate(holes)]
    box_records = [BoxRecord(i, height, AtNode(node)) for i, (node, height) in enumerate(boxes)]
    agent_records = [AgentRecord(i, node) for i, node in enumerate(agents)]
    return WorldGraph(
        nodes, edges, hole_records, box_records, agent_records, n - 1 if goal is None else goal
    )


@pytest.fixture
def make_line_world():
    return line_world


@pytest.fixture(autouse=True)
def cleanup_db():
    """Clean up database sessions after each test."""
    yield
    # Clean up any failed transactions
    try:
        db.session.rollback()
        db.session.close()
    except Exception:
        pass
