import logging
from flask import Flask, jsonify
from config import Config
from .errors import XbarError
from .extensions import db

def create_app(config_class=Config):
    app = Flask(__name__)
    app.config.from_object(config_class)

    logging.basicConfig(level=app.config['LOG_LEVEL'],
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    app.logger.setLevel(app.config['LOG_LEVEL'])

    db.init_app(app)

    with app.app_context():
        # Models must be imported before create_all so their tables are known.
        from .models import experiment_run_model, model_artifact_model
        db.create_all()

        from .routes.common import common_bp
        from .routes.circuit import circuit_bp
        from .routes.experiments import experiments_bp

        app.register_blueprint(common_bp, url_prefix='/api/common')
        app.register_blueprint(circuit_bp, url_prefix='/api/circuit')
        app.register_blueprint(experiments_bp, url_prefix='/api/experiments')

    from .cli import register_commands
    register_commands(app)

    @app.errorhandler(XbarError)
    def handle_xbar_error(e):
        return jsonify({'message': str(e)}), e.http_status

    return app
