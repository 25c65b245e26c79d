""" A small signal/slot implementation used to publish progress.

Long loops (k-means iterations, bundle adjustment steps, pipeline stages)
emit a signal on every step; the command line connects a logging slot and
tests connect recorders.

Bound methods are held weakly so a listener going away disconnects itself;
plain functions are held strongly until disconnected.

"""

import inspect
import weakref


class Signal:

    def __init__(self, name=''):
        self.name = name
        self._functions = []
        self._methods = []

    def __call__(self, *args, **kwargs):
        for func in list(self._functions):
            func(*args, **kwargs)
        alive = []
        for ref in self._methods:
            method = ref()
            if method is not None:
                method(*args, **kwargs)
                alive.append(ref)
        self._methods = alive

    def __len__(self):
        return len(self._functions) + sum(1 for r in self._methods
                                          if r() is not None)

    def __repr__(self):
        return '<Signal %s: %d slots>' % (self.name, len(self))

    def connect(self, slot):
        if inspect.ismethod(slot):
            if all(r() != slot for r in self._methods):
                self._methods.append(weakref.WeakMethod(slot))
        elif slot not in self._functions:
            self._functions.append(slot)

    def disconnect(self, slot):
        if inspect.ismethod(slot):
            self._methods = [r for r in self._methods if r() != slot]
        elif slot in self._functions:
            self._functions.remove(slot)

    def clear(self):
        self._functions.clear()
        self._methods.clear()
