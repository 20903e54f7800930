import os
from dotenv import load_dotenv

basedir = os.path.abspath(os.path.dirname(__file__))
load_dotenv(os.path.join(basedir, '.env'))

class Config:
    SQLALCHEMY_DATABASE_URI = os.environ.get('DATABASE_URL') or 'sqlite:///' + os.path.join(basedir, 'xbar.db')
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Simulation inputs and artefacts
    DIGITS_PATH = os.environ.get('DIGITS_PATH') or os.path.join(basedir, 'data', 'digits.csv')
    OUTPUT_DIR = os.environ.get('OUTPUT_DIR') or os.path.join(basedir, 'runs')
    BASELINE_PATH = os.environ.get('BASELINE_PATH') or os.path.join(OUTPUT_DIR, 'default', 'baseline.json')
    STUCK_MODE = os.environ.get('STUCK_MODE') or 'stuck_off'
    WORKERS = int(os.environ.get('WORKERS') or 1)

    LOG_LEVEL = os.environ.get('LOG_LEVEL') or 'INFO'


class TestConfig(Config):
    TESTING = True
    SQLALCHEMY_DATABASE_URI = 'sqlite://'
    LOG_LEVEL = 'WARNING'
