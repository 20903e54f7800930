"""``flask --app run <command> --config configs/<experiment>.json`` drives the pipeline;
``python run.py`` serves the read-only dashboard API."""
from app import create_app

app = create_app()

if __name__ == '__main__':
    app.run(debug=app.config.get('DEBUG', False))
