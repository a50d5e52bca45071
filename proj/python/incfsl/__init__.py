"""Semi-supervised incremental few-shot learning toolkit.

Python bindings over the C++ core: dataset synthesis, episode sampling,
the cosine-classifier model, prototype refinement, meta-training, test-time
adaptation and the evaluation protocol.
"""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
