"""Schema-guided dialogue state tracking with a question-answering NLU core.

Subpackages are imported lazily by the code that needs them; importing
`schemadst` itself stays cheap (no compiled-kernel backend is loaded until
`schemadst.kernels` is touched).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ConsistencyError,
    ParseError,
    SchemaDstError,
    TrainingDivergedError,
    UnbuildableExampleError,
    ValidationError,
)
