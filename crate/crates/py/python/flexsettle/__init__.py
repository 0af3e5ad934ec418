from ._flexsettle import *  # noqa: F401,F403
from ._flexsettle import __all__  # noqa: F401
