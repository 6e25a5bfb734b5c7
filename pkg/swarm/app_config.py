import os

SWARM_ROOT = os.path.dirname(os.path.abspath(__file__))


class Config:
    """Application configuration."""

    # Run artifacts
    OUTPUT_DIR = os.environ.get("SWARM_OUTPUT_DIR", "output")
    SCENARIO_DIR = os.environ.get("SWARM_SCENARIO_DIR", os.path.join(SWARM_ROOT, "scenarios"))
    DEFAULT_SEED = int(os.environ.get("SWARM_SEED", "0"))

    # Database configuration
    SQLALCHEMY_DATABASE_URI = os.environ.get("SQLALCHEMY_DATABASE_URI")

    if not SQLALCHEMY_DATABASE_URI:
        if os.environ.get("DB_HOST"):
            # Build PostgreSQL URI from components
            DB_USER = os.environ.get("DB_USER", "swarm")
            DB_PASS = os.environ.get("DB_PASS", "swarm-password")
            DB_HOST = os.environ.get("DB_HOST")
            DB_PORT = os.environ.get("DB_PORT", "5432")
            DB_NAME = os.environ.get("DB_NAME", "swarm")
            SQLALCHEMY_DATABASE_URI = (
                f"postgresql://{DB_USER}:{DB_PASS}@{DB_HOST}:{DB_PORT}/{DB_NAME}"
            )
        else:
            SQLALCHEMY_DATABASE_URI = (
                f"sqlite:///{os.path.join(os.path.abspath(OUTPUT_DIR), 'swarm.db')}"
            )

    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Flask configuration
    SECRET_KEY = os.environ.get("SECRET_KEY", "dev-key-change-in-production")

    # Application settings
    DEBUG = os.environ.get("FLASK_DEBUG", "False").lower() == "true"
