"""Central finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

import numpy as np

from inflow.autodiff import Tape, Tensor


def check_gradients(loss_fn, tensors: list[Tensor], rng: np.random.Generator,
                    num_probes: int = 40, h: float = 1e-5, rtol: float = 1e-4,
                    atol: float = 1e-8) -> float:
    """Compare reverse-mode gradients against central differences.

    `loss_fn` must rebuild the forward pass from the tensors' current values
    and return a scalar Tensor. Probes perturb random elements of random
    tensors; returns the worst relative error over probes whose gradient is
    large enough for a relative comparison to mean anything (near-zero pairs
    are held to the absolute floor instead, which sits above FD noise).
    """
    for t in tensors:
        assert t.requires_grad, "probed tensors must require gradients"
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    grads = [tape.grad(t) for t in tensors]

    def loss_value() -> float:
        return loss_fn().item()

    worst = 0.0
    for _ in range(num_probes):
        ti = int(rng.integers(len(tensors)))
        t = tensors[ti]
        if t.data.size == 0:
            continue
        j = int(rng.integers(t.data.size))
        orig = t.data.flat[j]
        t.data.flat[j] = orig + h
        f_plus = loss_value()
        t.data.flat[j] = orig - h
        f_minus = loss_value()
        t.data.flat[j] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        analytic = grads[ti].flat[j]
        err = abs(analytic - fd)
        scale = max(abs(analytic), abs(fd))
        assert err <= max(rtol * scale, atol), (
            f"gradient mismatch at tensor {ti} elem {j}: "
            f"analytic={analytic!r} fd={fd!r}"
        )
        if scale >= 1e-4:
            worst = max(worst, err / scale)
    return worst
