"""Delayed-RL toolkit: belief forecasting, delayed SAC and bound verification."""

from _dblf import *  # noqa: F401,F403
from _dblf import __doc__  # noqa: F401
