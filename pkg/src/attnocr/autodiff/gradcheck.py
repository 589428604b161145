"""Central finite-difference checking of tape gradients."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import topological_order


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str | None
    worst_index: tuple | None
    checked: int
    excluded: list = field(default_factory=list)

    def __str__(self):
        where = f"{self.worst_param}{list(self.worst_index)}" if self.worst_param else "-"
        return (f"max_rel_err={self.max_rel_err:.3e} at {where} "
                f"({self.checked} checked, {len(self.excluded)} excluded)")


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def _branches(loss):
    return [node.branch for node in topological_order(loss) if node.branch is not None]


def _same_branches(xs, ys):
    return len(xs) == len(ys) and all(np.array_equal(x, y) for x, y in zip(xs, ys))


def grad_check(builder, params, eps=1e-5, floor=1e-6, max_per_param=None, rng=None):
    """Compare tape gradients of ``builder()`` with central differences.

    ``builder`` takes no arguments and rebuilds the scalar loss from the
    current values of the tensors in ``params`` (a name -> Tensor map).
    Coordinates where the +eps and -eps evaluations take different branches
    of a non-smooth op (pool argmax, relu/clip masks) are excluded.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params.values():
        p.zero_grad()
    loss = builder()
    loss.backward()
    tape = {name: p.grad.copy() for name, p in params.items()}

    worst = (0.0, None, None)
    checked = 0
    excluded = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            rng = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(rng.choice(flat.size, max_per_param, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            up = builder()
            flat[i] = orig - eps
            down = builder()
            flat[i] = orig
            idx = np.unravel_index(i, p.shape)
            if not _same_branches(_branches(up), _branches(down)):
                excluded.append((name, idx))
                continue
            numeric = (float(up.data) - float(down.data)) / (2 * eps)
            analytic = float(tape[name].reshape(-1)[i])
            err = relative_error(analytic, numeric, floor)
            checked += 1
            if err > worst[0] or worst[1] is None:
                worst = (err, name, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], checked, excluded)
