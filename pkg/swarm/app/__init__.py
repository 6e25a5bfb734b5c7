import os

from app.extensions import db
from app_config import Config
from flask import Flask


def create_app(config_overrides=None):
    app = Flask(__name__, instance_relative_config=True)

    app.config.from_object(Config)
    if config_overrides:
        app.config.update(config_overrides)
    app.url_map.strict_slashes = False

    os.makedirs(app.config["OUTPUT_DIR"], exist_ok=True)
    db.init_app(app)

    from app.tracker import RunTracker

    with app.app_context():
        RunTracker().make_table()

    from app.api import register as register_api

    register_api(app)

    from app.cli import swarm_cli

    app.cli.add_command(swarm_cli)

    return app
