import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GraphError
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

ScalarFn = Callable[..., Tensor]


def _as_list(inputs: Union[Tensor, Sequence[Tensor]]) -> List[Tensor]:
    return [inputs] if isinstance(inputs, Tensor) else list(inputs)


def _coordinates(shape: Tuple[int, ...], samples: Optional[int], rng: np.random.Generator) -> List[Tuple[int, ...]]:
    total = int(np.prod(shape)) if shape else 1
    if samples is None or samples >= total:
        flat = range(total)
    else:
        flat = sorted(rng.choice(total, size=samples, replace=False).tolist())
    return [tuple(int(i) for i in np.unravel_index(k, shape)) for k in flat]


def numerical_gradient(f: ScalarFn, inputs: Sequence[Tensor], which: int, index: Tuple[int, ...],
                       eps: float = 1e-4) -> float:
    """Central difference of f with respect to one element of one input."""
    data = inputs[which].data
    original = data[index]
    with no_grad():
        data[index] = original + eps
        plus = f(*inputs).item()
        data[index] = original - eps
        minus = f(*inputs).item()
    data[index] = original
    return (plus - minus) / (2.0 * eps)


def _relative_error(analytic: float, numerical: float) -> float:
    return abs(analytic - numerical) / max(abs(analytic), abs(numerical), 1e-8)


def grad_check(f: ScalarFn, inputs: Union[Tensor, Sequence[Tensor]], eps: float = 1e-4,
               samples: Optional[int] = None, seed: int = 0, refine_above: Optional[float] = None,
               refinements: int = 2) -> float:
    """
    Compare analytic gradients against central finite differences.

    Args:
        f (ScalarFn): Called as f(*inputs); must return a scalar Tensor
        inputs (Union[Tensor, Sequence[Tensor]]): Float64 tensors; every one
            with requires_grad set is checked
        eps (float): Finite-difference step
        samples (Optional[int]): Check this many random coordinates per input
            instead of all of them
        seed (int): Seed for coordinate sampling
        refine_above (Optional[float]): Coordinates whose error exceeds this are
            measured again with the step divided by 10, up to `refinements`
            times, keeping the smallest error. A step that straddles a relu or
            max-pool kink is rejected this way; a wrong backward rule is not.
        refinements (int): Maximum number of step reductions per coordinate

    Returns:
        float: max |analytic − fd| / max(|analytic|, |fd|, 1e-8) over the checked elements

    Raises:
        GraphError: If an input is not double precision or f is not scalar
    """
    tensors = _as_list(inputs)
    for t in tensors:
        if t.dtype != np.float64:
            raise GraphError(f"grad_check needs float64 inputs, got {t.dtype}")
        t.zero_grad()

    out = f(*tensors)
    out.backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for which, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        for index in _coordinates(t.shape, samples, rng):
            a = float(analytic[index])
            step = eps
            fd = numerical_gradient(f, tensors, which, index, step)
            err = _relative_error(a, fd)
            for _ in range(refinements if refine_above is not None else 0):
                if err <= refine_above:
                    break
                step /= 10.0
                fd_fine = numerical_gradient(f, tensors, which, index, step)
                if _relative_error(a, fd_fine) < err:
                    fd, err = fd_fine, _relative_error(a, fd_fine)
            if err > worst:
                worst = err
                logger.debug("input %d at %s: analytic %.6e, numerical %.6e", which, index, a, fd)
    return worst
