from app.extensions import db
from datetime import datetime
import json

class ExperimentRun(db.Model):
    id = db.Column(db.Integer, primary_key=True)
    command = db.Column(db.String(30), nullable=False)  # train-base, gen-corpus, same-defect, ...
    status = db.Column(db.String(20), nullable=False, default='Running')  # Running, Completed, Failed
    seed = db.Column(db.Integer, nullable=True)
    output_dir = db.Column(db.String(255), nullable=False)
    config_json = db.Column(db.Text, nullable=True)
    summary_json = db.Column(db.Text, nullable=True)
    report_json_path = db.Column(db.String(255), nullable=True)
    report_csv_path = db.Column(db.String(255), nullable=True)
    error = db.Column(db.Text, nullable=True)
    started_at = db.Column(db.DateTime, default=datetime.utcnow)
    finished_at = db.Column(db.DateTime, nullable=True)

    def finish(self, summary=None, error=None):
        self.status = 'Failed' if error else 'Completed'
        self.error = error
        if summary is not None:
            self.summary_json = json.dumps(summary, sort_keys=True)
        self.finished_at = datetime.utcnow()

    def to_dict(self):
        return {
            'id': self.id,
            'command': self.command,
            'status': self.status,
            'seed': self.seed,
            'outputDir': self.output_dir,
            'config': json.loads(self.config_json) if self.config_json else None,
            'summary': json.loads(self.summary_json) if self.summary_json else None,
            'reportJson': self.report_json_path,
            'reportCsv': self.report_csv_path,
            'error': self.error,
            'startedAt': self.started_at.strftime('%Y-%m-%d %H:%M:%S') if self.started_at else None,
            'finishedAt': self.finished_at.strftime('%Y-%m-%d %H:%M:%S') if self.finished_at else None,
        }
