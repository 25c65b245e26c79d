import os
import logging
import logging.config

import yaml


def default_config_file():
    """ Path of the logging configuration shipped with the package. """
    mod_path = os.path.dirname(os.path.realpath(__file__))
    return os.path.sep.join([mod_path, 'resources', 'log.config.yaml'])


def setup_logging(
        default_path=None,
        default_level=logging.INFO,
        env_key='MVMATCH_LOG_CFG'
):
    """Setup logging configuration

    The file named by the environment variable `env_key` wins over
    `default_path`; without a readable file fall back to basicConfig.

    """
    path = os.getenv(env_key, None) or default_path or default_config_file()
    if os.path.exists(path):
        with open(path, 'rt') as f:
            config = yaml.safe_load(f.read())
        logging.config.dictConfig(config)
        logging.getLogger('mvmatch').debug('logging configured from "%s"', path)
    else:
        logging.basicConfig(level=default_level)
        logging.getLogger('mvmatch').debug(
            'could not open log config file "%s"', path)
