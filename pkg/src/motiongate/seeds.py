import numpy as np

DEFAULT_SEED = 7


def derive_seed(seed, *keys) -> int:
    """Deterministic child seed for ``(seed, *keys)``; keys are non-negative ints."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
