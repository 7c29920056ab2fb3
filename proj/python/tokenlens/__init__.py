"""Desk-scale lab for visual-token information, pruning horizons and hybrid
pruning schedules on a trainable toy multimodal decoder.

The compiled extension provides the full API; this package re-exports it.
When TOKENLENS_EXT_DIR is set (build-tree testing), the extension is loaded
from there instead of the installed package directory.
"""

import importlib
import importlib.util
import os
import sys


def _load_core():
    ext_dir = os.environ.get("TOKENLENS_EXT_DIR")
    if ext_dir:
        for name in os.listdir(ext_dir):
            if name.startswith("_core") and (name.endswith(".so") or name.endswith(".pyd")):
                spec = importlib.util.spec_from_file_location(
                    __name__ + "._core", os.path.join(ext_dir, name)
                )
                module = importlib.util.module_from_spec(spec)
                sys.modules[spec.name] = module
                spec.loader.exec_module(module)
                return module
        raise ImportError(f"no _core extension found in {ext_dir}")
    return importlib.import_module("._core", __name__)


_core = _load_core()

globals().update(
    {name: getattr(_core, name) for name in dir(_core) if not name.startswith("__")}
)

__version__ = _core.__version__
