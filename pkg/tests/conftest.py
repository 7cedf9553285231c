from __future__ import annotations

import numpy as np

from lineagesim.paths import StepPath


def random_step_path(rng: np.random.Generator, T: float, max_jumps: int = 3,
                     d: int = 1, value_scale: float = 1.0) -> StepPath:
    k = int(rng.integers(0, max_jumps + 1))
    times = np.unique(np.concatenate([[0.0], np.sort(rng.uniform(0.0, T, k))]))
    values = rng.normal(0.0, value_scale, (len(times), d))
    return StepPath(times, values)
