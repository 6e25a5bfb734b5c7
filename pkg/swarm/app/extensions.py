from flask_sqlalchemy import SQLAlchemy

db = SQLAlchemy()

# portable between SQLite and PostgreSQL
RUN_TRACKER_DDL = """
    CREATE TABLE IF NOT EXISTS run_tracker(
        command VARCHAR,
        scenario VARCHAR,
        seed BIGINT,
        status VARCHAR,
        steps_mean FLOAT,
        steps_std FLOAT,
        success_mean FLOAT,
        success_std FLOAT,
        output_path VARCHAR,
        date_added TIMESTAMP DEFAULT CURRENT_TIMESTAMP
    )
"""
