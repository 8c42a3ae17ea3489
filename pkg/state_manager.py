"""
State Manager Module

This module provides a SQLite-based ledger of pipeline stage runs inside a
work directory. Each stage declares the files it will write; a failed stage
has those files removed so no partial artifact is mistaken for a result.
"""

import json
import os
import sqlite3
import time

from logger_setup import logger

# Define possible stage states
STATUS_PENDING = 'pending'
STATUS_IN_PROGRESS = 'in_progress'
STATUS_COMPLETE = 'complete'
STATUS_FAILED = 'failed'


class StateManager:
    """
    Tracks the status, declared outputs and attempt count of every pipeline
    stage using a SQLite database.
    """

    def __init__(self, db_path):
        """
        Initialize the StateManager with a database file path.

        Args:
            db_path (str): Path to the SQLite database file
        """
        self.db_path = db_path
        self.conn = None
        self.cursor = None
        self._connect()
        self._create_table()

    def _connect(self):
        """Establishes connection to the SQLite database."""
        try:
            directory = os.path.dirname(self.db_path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            self.conn = sqlite3.connect(self.db_path)
            self.cursor = self.conn.cursor()
            logger.debug(f"Connected to stage ledger: {self.db_path}")
        except sqlite3.Error as e:
            logger.error(f"Error connecting to database {self.db_path}: {e}")
            raise

    def _create_table(self):
        """Creates the stage_runs table if it doesn't exist."""
        try:
            self.cursor.execute(f'''
            CREATE TABLE IF NOT EXISTS stage_runs (
                stage TEXT PRIMARY KEY,             -- Pipeline stage name (synth, ingest, ...)
                status TEXT NOT NULL DEFAULT '{STATUS_PENDING}',
                outputs TEXT,                       -- JSON list of declared output files
                attempts INTEGER DEFAULT 0,
                started_at REAL,
                finished_at REAL,
                error_message TEXT
            )
            ''')
            self.cursor.execute('CREATE INDEX IF NOT EXISTS idx_stage_status ON stage_runs (status)')
            self.conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error creating stage_runs table: {e}")
            raise

    def begin_stage(self, stage, outputs):
        """
        Mark a stage in progress and record the files it is about to write.

        Args:
            stage (str): Stage name
            outputs (list of str): Paths the stage will produce
        """
        now = time.time()
        self.cursor.execute('''
        INSERT INTO stage_runs (stage, status, outputs, attempts, started_at, finished_at, error_message)
        VALUES (?, ?, ?, 1, ?, NULL, NULL)
        ON CONFLICT(stage) DO UPDATE SET
            status = excluded.status,
            outputs = excluded.outputs,
            attempts = stage_runs.attempts + 1,
            started_at = excluded.started_at,
            finished_at = NULL,
            error_message = NULL
        ''', (stage, STATUS_IN_PROGRESS, json.dumps([str(p) for p in outputs]), now))
        self.conn.commit()
        logger.debug(f"Stage {stage} started")

    def _outputs(self, stage):
        self.cursor.execute('SELECT outputs FROM stage_runs WHERE stage = ?', (stage,))
        row = self.cursor.fetchone()
        return json.loads(row[0]) if row and row[0] else []

    def _finish(self, stage, status, error_message=None):
        self.cursor.execute(
            'UPDATE stage_runs SET status = ?, finished_at = ?, error_message = ? WHERE stage = ?',
            (status, time.time(), error_message, stage))
        self.conn.commit()

    def complete_stage(self, stage):
        """
        Mark a stage complete once every declared output exists.

        Returns:
            bool: True if the stage is complete, False if an output is missing
        """
        missing = [path for path in self._outputs(stage) if not os.path.exists(path)]
        if missing:
            self.fail_stage(stage, f"Missing outputs: {', '.join(missing)}")
            return False
        self._finish(stage, STATUS_COMPLETE)
        logger.info(f"Stage {stage} complete")
        return True

    def fail_stage(self, stage, error_message, remove_outputs=True):
        """Mark a stage failed and, by default, delete whatever outputs it left behind."""
        if remove_outputs:
            for path in self._outputs(stage):
                if os.path.isfile(path):
                    os.remove(path)
                    logger.debug(f"Removed partial output {path}")
        self._finish(stage, STATUS_FAILED, error_message)
        logger.error(f"Stage {stage} failed: {error_message}")

    def get_stage_status(self, stage):
        """
        Returns:
            str or None: Current status of the stage, or None if never run
        """
        self.cursor.execute('SELECT status FROM stage_runs WHERE stage = ?', (stage,))
        row = self.cursor.fetchone()
        return row[0] if row else None

    def get_attempts(self, stage):
        self.cursor.execute('SELECT attempts FROM stage_runs WHERE stage = ?', (stage,))
        row = self.cursor.fetchone()
        return row[0] if row else 0

    def get_summary(self):
        """
        Returns a summary count of stages by status.

        Returns:
            dict: Dictionary with counts for each status plus 'total'
        """
        summary = {STATUS_PENDING: 0, STATUS_IN_PROGRESS: 0, STATUS_COMPLETE: 0, STATUS_FAILED: 0}
        self.cursor.execute('SELECT status, COUNT(*) FROM stage_runs GROUP BY status')
        for status, count in self.cursor.fetchall():
            if status in summary:
                summary[status] = count
        summary['total'] = sum(summary.values())
        return summary

    def close(self):
        """Closes the database connection."""
        if self.conn:
            self.conn.commit()
            self.conn.close()
            self.conn = None
