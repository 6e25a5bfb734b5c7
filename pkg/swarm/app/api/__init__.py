"""JSON endpoints over the run tracker."""

from flask import Blueprint

api = Blueprint("api", __name__, url_prefix="/api")


def register(app):
    # routes attach themselves to the blueprint on import
    from app.api import routes  # noqa: F401

    app.register_blueprint(api)
