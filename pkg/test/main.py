import os
import unittest

if __name__ == '__main__':
    here = os.path.dirname(os.path.abspath(__file__))
    loader = unittest.TestLoader()
    tests = loader.discover(here, pattern="test_*.py",
                            top_level_dir=os.path.dirname(here))
    testRunner = unittest.runner.TextTestRunner(verbosity=2)
    testRunner.run(tests)
