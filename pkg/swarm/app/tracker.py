import logging

from app.extensions import RUN_TRACKER_DDL, db
from sqlalchemy import text

logger = logging.getLogger(__name__)

TRACKER_COLUMNS = [
    "command",
    "scenario",
    "seed",
    "status",
    "steps_mean",
    "steps_std",
    "success_mean",
    "success_std",
    "output_path",
    "date_added",
]


class RunTracker(object):
    """One row per CLI run in the run_tracker table."""

    def make_table(self):
        with db.engine.begin() as curs:
            curs.execute(text(RUN_TRACKER_DDL))

    def record(self, command, status, scenario=None, seed=None, metrics=None, output_path=None):
        insert = """
            INSERT INTO run_tracker
              (command, scenario, seed, status, steps_mean, steps_std, success_mean,
               success_std, output_path)
            VALUES
              (:command, :scenario, :seed, :status, :steps_mean, :steps_std, :success_mean,
               :success_std, :output_path)
        """
        params = {
            "command": command,
            "scenario": scenario,
            "seed": seed,
            "status": status,
            "steps_mean": None,
            "steps_std": None,
            "success_mean": None,
            "success_std": None,
            "output_path": output_path,
        }
        if metrics is not None:
            params.update(
                steps_mean=metrics.steps_mean,
                steps_std=metrics.steps_std,
                success_mean=metrics.success_mean,
                success_std=metrics.success_std,
            )
        with db.engine.begin() as curs:
            curs.execute(text(insert), params)
        logger.info(f"Recorded {command} run with status {status}")
