"""Caption-conditioned adversarial video generation at desk scale.

Submodules are imported lazily by callers; keep this module import-light so
the CLI can configure thread limits before numpy loads.
"""

__version__ = "0.1.0"
