import logging
import os
import unittest
from unittest import mock

from mvmatch.signals import Signal
from mvmatch.utils import default_config_file, setup_logging


class Counter:

    def __init__(self):
        self.calls = []

    def slot(self, *args):
        self.calls.append(args)


class TestSignal(unittest.TestCase):

    def test_functions_and_methods(self):
        signal = Signal('test')
        seen = []
        counter = Counter()
        signal.connect(seen.append)
        signal.connect(counter.slot)
        signal.connect(counter.slot)
        self.assertEqual(len(signal), 2)
        signal(5)
        self.assertEqual(seen, [5])
        self.assertEqual(counter.calls, [(5,)])
        signal.disconnect(counter.slot)
        signal(6)
        self.assertEqual(counter.calls, [(5,)])
        self.assertEqual(seen, [5, 6])

    def test_dead_listener_goes_away(self):
        signal = Signal()
        counter = Counter()
        signal.connect(counter.slot)
        del counter
        signal(1)
        self.assertEqual(len(signal), 0)

    def test_clear(self):
        signal = Signal()
        signal.connect(print)
        signal.clear()
        self.assertEqual(len(signal), 0)


class TestLogging(unittest.TestCase):

    def test_packaged_config(self):
        self.assertTrue(os.path.exists(default_config_file()))
        with mock.patch.dict(os.environ, {'MVMATCH_LOG_CFG': ''}):
            setup_logging()
        self.assertEqual(logging.getLogger('mvmatch').level, logging.INFO)

    def test_missing_config_falls_back(self):
        with mock.patch.dict(os.environ, {'MVMATCH_LOG_CFG': '/no/such/log.yaml'}), \
                mock.patch('logging.basicConfig') as basic:
            setup_logging()
        basic.assert_called_once_with(level=logging.INFO)


if __name__ == '__main__':
    unittest.main()
