from .tensor import (Tensor, as_tensor, default_dtype, get_default_dtype, is_grad_enabled,
                     no_grad, set_debug, set_default_dtype, tape_of)
from .gradcheck import GradcheckReport, gradcheck, rel_error
from . import ops, mscw

__all__ = [
    "Tensor", "as_tensor", "default_dtype", "get_default_dtype", "is_grad_enabled", "no_grad",
    "set_debug", "set_default_dtype", "tape_of", "GradcheckReport", "gradcheck", "rel_error",
    "ops", "mscw",
]
