import logging

logging.getLogger('mvmatch').addHandler(logging.NullHandler())

__version__ = '0.1'
