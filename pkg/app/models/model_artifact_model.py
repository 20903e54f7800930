from app.extensions import db
from datetime import datetime

class ModelArtifact(db.Model):
    id = db.Column(db.Integer, primary_key=True)
    run_id = db.Column(db.Integer, db.ForeignKey('experiment_run.id'), nullable=True)
    role = db.Column(db.String(20), nullable=False)  # baseline, corrector
    architecture = db.Column(db.String(30), nullable=False)
    parameters = db.Column(db.Integer, nullable=False)
    path = db.Column(db.String(255), nullable=True)
    train_accuracy = db.Column(db.Float, nullable=True)
    validation_accuracy = db.Column(db.Float, nullable=True)
    test_accuracy = db.Column(db.Float, nullable=True)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    run = db.relationship('ExperimentRun', backref=db.backref('artifacts', lazy=True))

    def to_dict(self):
        return {
            'id': self.id,
            'runId': self.run_id,
            'role': self.role,
            'architecture': self.architecture,
            'parameters': self.parameters,
            'path': self.path,
            'trainAccuracy': self.train_accuracy,
            'validationAccuracy': self.validation_accuracy,
            'testAccuracy': self.test_accuracy,
        }
