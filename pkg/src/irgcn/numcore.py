"""Dense numeric kernels used by every other module.

All matrices are float64 numpy arrays in row-major order. Randomness always
flows through a Generator built by :func:`make_rng` / :func:`derive_rng`, so a
run is bit-reproducible given its seed. Backward passes in the rest of the
package are hand-derived; :func:`finite_diff_check` is the harness that keeps
them honest.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError


def make_rng(seed):
    """Deterministic random stream for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_rng(seed, stream_id):
    """Independent child stream (master seed, stream id), e.g. one per parallel job."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), int(stream_id)]))
    )


def as_matrix(values):
    """Coerce to a 2-D float64 array, validating finiteness."""
    out = np.asarray(values, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise NumericError("matrix contains NaN or Inf entries")
    return out


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, upstream):
    """Backward ReLU: mask the upstream gradient where the forward input was <= 0.

    The subgradient at exactly 0 is taken to be 0, which the finite-difference
    checks rely on.
    """
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise DimensionError(
            f"relu backward shape mismatch: input {x.shape} vs upstream {upstream.shape}"
        )
    return np.where(x > 0.0, upstream, 0.0)


@dataclass
class AdamState:
    """Per-parameter Adam accumulators plus hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        param = np.asarray(param)
        return cls(
            m=np.zeros_like(param, dtype=np.float64),
            v=np.zeros_like(param, dtype=np.float64),
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(param, grad, state):
    """One bias-corrected Adam update. Returns the new parameter array.

    The state is mutated in place (t increments by exactly one). Non-finite
    gradients refuse the update rather than poisoning the accumulators.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DimensionError(f"param shape {param.shape} vs grad shape {grad.shape}")
    if state.m.shape != param.shape:
        raise DimensionError(
            f"Adam state shape {state.m.shape} does not track parameter {param.shape}"
        )
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient entries, update refused")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask of {0, 1/(1-rate)} so masked activations keep their mean."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def finite_diff_check(loss_fn, param, analytic_grad, h=1e-5):
    """Max relative error between analytic_grad and central differences of loss_fn.

    loss_fn must be a pure scalar function of the parameter. The relative
    error denominator is max(|analytic|, |numeric|, 1e-8) per entry. This
    reports; callers decide what error is acceptable.
    """
    param = np.array(param, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if param.shape != analytic_grad.shape:
        raise DimensionError(
            f"param shape {param.shape} vs analytic grad shape {analytic_grad.shape}"
        )
    worst = 0.0
    flat = param.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(param)
        flat[i] = orig - h
        down = loss_fn(param)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        a = analytic_grad.ravel()[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
