"""
Database Models for the Run Archive

Every command-line run that gets past config validation is recorded with
its configuration, seed, exit code and the files it wrote, so earlier
results can be listed and traced back to their inputs (`runs` command).
"""

from flask_sqlalchemy import SQLAlchemy
from datetime import datetime
import json
import uuid

# SQLAlchemy database instance (initialized in app.py)
db = SQLAlchemy()


class Run(db.Model):
    """
    One invocation of a computational subcommand.

    Relationships:
        artifacts (RunArtifact[]): files written by the run, in write order
    """
    __tablename__ = 'runs'

    id = db.Column(db.Integer, primary_key=True)
    uuid = db.Column(db.String(36), unique=True, nullable=False, default=lambda: str(uuid.uuid4()))

    command = db.Column(db.String(40), nullable=False)
    config_json = db.Column(db.Text, nullable=False)  # RunConfig.to_dict() as JSON
    seed = db.Column(db.Integer, nullable=False, default=0)
    exit_code = db.Column(db.Integer, nullable=False, default=0)
    message = db.Column(db.Text, nullable=True)  # Error message of failed runs
    wall_time = db.Column(db.Float, nullable=True)  # Seconds

    created_at = db.Column(db.DateTime, nullable=False, default=datetime.utcnow)

    artifacts = db.relationship(
        'RunArtifact',
        backref='run',
        lazy=True,
        cascade='all, delete-orphan',
        order_by='RunArtifact.position'
    )

    def __repr__(self):
        return f'<Run {self.uuid}: {self.command} exit={self.exit_code}>'

    @property
    def config(self):
        return json.loads(self.config_json)

    def summary(self):
        """Flat dictionary for listings."""
        return {
            'uuid': self.uuid,
            'command': self.command,
            'seed': self.seed,
            'exit_code': self.exit_code,
            'wall_time': self.wall_time,
            'created_at': self.created_at.isoformat(timespec='seconds'),
            'files': [artifact.path for artifact in self.artifacts],
        }


class RunArtifact(db.Model):
    """A file written by a run (table, summary, plot or sidecar)."""
    __tablename__ = 'run_artifacts'

    id = db.Column(db.Integer, primary_key=True)
    run_id = db.Column(db.Integer, db.ForeignKey('runs.id'), nullable=False)

    path = db.Column(db.String(500), nullable=False)
    kind = db.Column(db.String(20), nullable=False)  # csv, json, svg, meta
    position = db.Column(db.Integer, nullable=False)  # Write order (0-indexed)

    def __repr__(self):
        return f'<RunArtifact {self.position} {self.kind} for Run {self.run_id}>'
