"""Driving systems, matrix generators, cocycle blocks and the noise model.

A cocycle is a driving map sigma on a state space together with a matrix
generator A(omega).  Blocks are products A(sigma^{n-1} omega) ... A(omega).
The perturbed cocycle replaces A(sigma^k omega) by A(sigma^k omega) + eps Delta_k
where the Delta_k are i.i.d. uniform on the operator-norm unit ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .errors import ConfigError, SamplerError, WindowUnderrun

_BLOCK = 1024
_NOISE_BLOCK = 64
MAX_BALL_DIM = 8


def _zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


# --------------------------------------------------------------------------
# Driving systems


@lru_cache(maxsize=4096)
def _bernoulli_block(seed: int, cumulative: tuple, block: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _zigzag(block)])
    u = rng.random(_BLOCK)
    out = np.searchsorted(np.asarray(cumulative), u, side="right")
    out = np.minimum(out, len(cumulative) - 1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BernoulliShift:
    """Two-sided i.i.d. shift; a state is an integer position in one fixed sequence.

    The symbol at position k depends only on (seed, k), so blocks of the
    sequence can be generated in any order.
    """

    probabilities: tuple
    seed: int = 0
    kind = "bernoulli_shift"

    def __post_init__(self):
        p = tuple(float(x) for x in self.probabilities)
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ConfigError(f"bernoulli probabilities must be nonnegative and sum to 1, got {p}")
        object.__setattr__(self, "probabilities", p)

    @property
    def alphabet_size(self) -> int:
        return len(self.probabilities)

    def shift(self, state: int, k: int = 1) -> int:
        return int(state) + int(k)

    def values(self, state: int, n: int) -> np.ndarray:
        start = int(state)
        cum = tuple(np.cumsum(self.probabilities).tolist())
        b0, b1 = start // _BLOCK, (start + n - 1) // _BLOCK
        chunks = [_bernoulli_block(self.seed, cum, b) for b in range(b0, b1 + 1)]
        seq = np.concatenate(chunks)
        off = start - b0 * _BLOCK
        return seq[off: off + n]

    def sample_state(self, rng) -> int:
        return int(rng.integers(0, 2**40))

    def params(self) -> dict:
        return {"probabilities": list(self.probabilities)}


@dataclass(frozen=True)
class CircleRotation:
    """x -> x + alpha (mod 1)."""

    alpha: float
    seed: int = 0
    kind = "circle_rotation"

    def shift(self, state: float, k: int = 1) -> float:
        return float((state + k * self.alpha) % 1.0)

    def values(self, state: float, n: int) -> np.ndarray:
        return (state + np.arange(n) * self.alpha) % 1.0

    def sample_state(self, rng) -> float:
        return float(rng.random())

    def params(self) -> dict:
        return {"alpha": self.alpha}


@dataclass(frozen=True)
class FiniteOrbit:
    """Periodic driver cycling through an explicit sequence of symbols."""

    sequence: tuple
    seed: int = 0
    kind = "finite_orbit"

    def __post_init__(self):
        if len(self.sequence) == 0:
            raise ConfigError("finite_orbit needs a nonempty sequence")
        object.__setattr__(self, "sequence", tuple(int(s) for s in self.sequence))

    def shift(self, state: int, k: int = 1) -> int:
        return (int(state) + int(k)) % len(self.sequence)

    def values(self, state: int, n: int) -> np.ndarray:
        seq = np.asarray(self.sequence)
        return seq[(int(state) + np.arange(n)) % len(seq)]

    def sample_state(self, rng) -> int:
        return int(rng.integers(0, len(self.sequence)))

    def params(self) -> dict:
        return {"sequence": list(self.sequence)}


# --------------------------------------------------------------------------
# Generators


@dataclass(frozen=True, eq=False)
class ConstantGenerator:
    matrix: np.ndarray
    kind = "constant"

    def __call__(self, values) -> np.ndarray:
        return np.broadcast_to(self.matrix, (len(values),) + self.matrix.shape)

    def scaled(self, c):
        return ConstantGenerator(c * self.matrix)

    def params(self) -> dict:
        return {"matrix": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class TableGenerator:
    """A(omega) = matrices[symbol(omega)]."""

    matrices: np.ndarray
    kind = "table"

    def __call__(self, values) -> np.ndarray:
        return self.matrices[np.asarray(values, dtype=int)]

    def scaled(self, c):
        return TableGenerator(c * self.matrices)

    def params(self) -> dict:
        return {"matrices": self.matrices.tolist()}


@dataclass(frozen=True, eq=False)
class TrigGenerator:
    """A(x) = a0 + a1 cos(2 pi x) + a2 sin(2 pi x) for a circle state x."""

    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    kind = "trig"

    def __call__(self, values) -> np.ndarray:
        x = 2 * np.pi * np.asarray(values, dtype=float)
        return (self.a0[None] + np.cos(x)[:, None, None] * self.a1[None]
                + np.sin(x)[:, None, None] * self.a2[None])

    def scaled(self, c):
        return TrigGenerator(c * self.a0, c * self.a1, c * self.a2)

    def params(self) -> dict:
        return {"a0": self.a0.tolist(), "a1": self.a1.tolist(), "a2": self.a2.tolist()}


# --------------------------------------------------------------------------
# Cocycles


@dataclass(frozen=True, eq=False)
class CocycleSystem:
    """Driver plus deterministic generator; all randomness lives in the driver seed."""

    driver: object
    generator: object
    d: int

    def shift(self, omega, k: int = 1):
        return self.driver.shift(omega, k)

    def matrices(self, omega, n: int) -> np.ndarray:
        """A(omega), A(sigma omega), ..., A(sigma^{n-1} omega) stacked, shape (n, d, d)."""
        if n == 0:
            return np.zeros((0, self.d, self.d))
        return np.asarray(self.generator(self.driver.values(omega, n)), dtype=float)

    def matrix(self, omega) -> np.ndarray:
        return self.matrices(omega, 1)[0]

    def sample_state(self, rng):
        return self.driver.sample_state(rng)

    def scaled(self, c: float) -> "CocycleSystem":
        return CocycleSystem(self.driver, self.generator.scaled(c), self.d)

    def dual(self) -> "DualCocycle":
        return DualCocycle(self)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "driver": {"kind": self.driver.kind, "params": self.driver.params(),
                       "seed": self.driver.seed},
            "generator": {"kind": self.generator.kind, **self.generator.params()},
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "CocycleSystem":
        return cocycle_from_dict(spec)


@dataclass(frozen=True, eq=False)
class DualCocycle:
    """Cocycle over sigma^{-1} with generator G(omega) = A(sigma^{-1} omega)^T."""

    base: CocycleSystem

    @property
    def d(self) -> int:
        return self.base.d

    def shift(self, omega, k: int = 1):
        return self.base.shift(omega, -k)

    def matrices(self, omega, n: int) -> np.ndarray:
        back = self.base.matrices(self.base.shift(omega, -n), n)
        return np.swapaxes(back[::-1], -1, -2)

    def matrix(self, omega) -> np.ndarray:
        return self.matrices(omega, 1)[0]

    def sample_state(self, rng):
        return self.base.sample_state(rng)

    def scaled(self, c):
        return DualCocycle(self.base.scaled(c))

    def dual(self):
        return self.base


def _matrix(x, d, name):
    m = np.asarray(x, dtype=float)
    if m.shape != (d, d):
        raise ConfigError(f"{name}: expected a {d}x{d} matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigError(f"{name}: matrix entries must be finite")
    return m


def cocycle_from_dict(spec: dict) -> CocycleSystem:
    """Build a cocycle from its JSON document form."""
    try:
        d = int(spec["d"])
        drv = spec["driver"]
        gen = spec["generator"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"cocycle config missing field: {exc}") from exc
    kind = drv.get("kind")
    params = drv.get("params", {})
    seed = int(drv.get("seed", 0))
    if kind == "bernoulli_shift":
        probs = params.get("probabilities")
        if probs is None:
            size = int(params["alphabet_size"])
            probs = [1.0 / size] * size
        driver = BernoulliShift(tuple(probs), seed)
    elif kind == "circle_rotation":
        driver = CircleRotation(float(params["alpha"]), seed)
    elif kind == "finite_orbit":
        driver = FiniteOrbit(tuple(params["sequence"]), seed)
    else:
        raise ConfigError(f"unknown driver kind {kind!r}")

    gkind = gen.get("kind")
    if gkind == "constant":
        generator = ConstantGenerator(_matrix(gen["matrix"], d, "generator.matrix"))
    elif gkind == "table":
        mats = np.stack([_matrix(m, d, f"generator.matrices[{i}]")
                         for i, m in enumerate(gen["matrices"])])
        generator = TableGenerator(mats)
        n_symbols = getattr(driver, "alphabet_size", None)
        if n_symbols is None and isinstance(driver, FiniteOrbit):
            n_symbols = max(driver.sequence) + 1
        if n_symbols is not None and n_symbols > len(mats):
            raise ConfigError(f"table has {len(mats)} matrices but driver uses {n_symbols} symbols")
    elif gkind == "trig":
        generator = TrigGenerator(*(_matrix(gen[k], d, f"generator.{k}") for k in ("a0", "a1", "a2")))
    else:
        raise ConfigError(f"unknown generator kind {gkind!r}")
    return CocycleSystem(driver, generator, d)


def cocycle_block(sys, omega, n: int) -> np.ndarray:
    """A^{(n)}(omega) = A(sigma^{n-1} omega) ... A(omega)."""
    if n < 1:
        raise ValueError("block length must be at least 1")
    return product(sys.matrices(omega, n))


def product(factors) -> np.ndarray:
    """Left-to-right composition: factors[0] is applied first."""
    factors = np.asarray(factors)
    out = factors[0].copy()
    for a in factors[1:]:
        out = a @ out
    return out


# --------------------------------------------------------------------------
# Samplers


class OperatorBallSampler:
    """Uniform samples from {M : ||M||_op <= 1} by rejection from the entry cube.

    Tracks the running acceptance rate; raises SamplerError if it collapses.
    """

    def __init__(self, d: int, min_rate: float = 1e-6, trial_batch: int = 1_000_000):
        if d > MAX_BALL_DIM:
            raise SamplerError(f"d={d} exceeds {MAX_BALL_DIM}; rejection from the cube is impractical")
        self.d = d
        self.min_rate = min_rate
        self.trial_batch = trial_batch
        self.proposed = 0
        self.accepted = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def _accept(self, m):
        # ||M||_op lies between the largest row/column norm and the Frobenius norm.
        col = np.sqrt(np.sum(m * m, axis=-2)).max(axis=-1)
        row = np.sqrt(np.sum(m * m, axis=-1)).max(axis=-1)
        frob = np.sqrt(np.sum(m * m, axis=(-2, -1)))
        ok = frob <= 1.0
        undecided = ~ok & (col <= 1.0) & (row <= 1.0)
        if np.any(undecided):
            ok[undecided] = np.linalg.norm(m[undecided], 2, axis=(-2, -1)) <= 1.0
        return ok

    def draw(self, rng, size: int) -> np.ndarray:
        d = self.d
        out = np.empty((size, d, d))
        filled = 0
        rate = 0.5 if d <= 2 else 0.03 if d == 3 else 1e-3
        while filled < size:
            need = size - filled
            batch = int(min(max(64, 1.3 * need / max(rate, 1e-6)), 2_000_000))
            cand = rng.uniform(-1.0, 1.0, size=(batch, d, d))
            ok = self._accept(cand)
            got = cand[ok][:need]
            out[filled: filled + len(got)] = got
            filled += len(got)
            self.proposed += batch
            self.accepted += int(ok.sum())
            rate = max(self.acceptance_rate, 1e-7)
            if self.proposed >= self.trial_batch and self.acceptance_rate < self.min_rate:
                raise SamplerError(
                    f"acceptance rate {self.acceptance_rate:.2e} below {self.min_rate:g} for d={d}; "
                    "use a smaller dimension")
        return out


def sample_operator_ball(rng, d: int, size: int | None = None) -> np.ndarray:
    """Uniform sample(s) from the operator-norm unit ball of d x d matrices."""
    sampler = OperatorBallSampler(d)
    out = sampler.draw(rng, 1 if size is None else size)
    return out[0] if size is None else out


def sample_entry_cube(rng, j: int, size: int | None = None) -> np.ndarray:
    """j x j matrices with i.i.d. entries uniform on [-1, 1]."""
    shape = (j, j) if size is None else (size, j, j)
    return rng.uniform(-1.0, 1.0, size=shape)


# --------------------------------------------------------------------------
# Noise


@lru_cache(maxsize=8192)
def _noise_block(seed: int, d: int, block: int) -> np.ndarray:
    rng = np.random.default_rng([seed, d, _zigzag(block)])
    out = OperatorBallSampler(d).draw(rng, _NOISE_BLOCK)
    out.setflags(write=False)
    return out


def noise_stream(seed: int, d: int, start: int, stop: int) -> np.ndarray:
    """Delta_k for start <= k < stop from a counter-based stream keyed by (seed, k // 64)."""
    if stop <= start:
        return np.zeros((0, d, d))
    b0, b1 = start // _NOISE_BLOCK, (stop - 1) // _NOISE_BLOCK
    seq = np.concatenate([_noise_block(seed, d, b) for b in range(b0, b1 + 1)])
    off = start - b0 * _NOISE_BLOCK
    return seq[off: off + stop - start]


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """A finite window of perturbations Delta_k, start <= k < start + len(deltas).

    Index 0 is aligned with the base state omega the realization is used with;
    ``shifted(m)`` realigns it with sigma^m omega.
    """

    epsilon: float
    deltas: np.ndarray
    start: int = 0
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @classmethod
    def generate(cls, epsilon: float, d: int, seed: int, start: int, stop: int) -> "NoiseRealization":
        return cls(float(epsilon), noise_stream(seed, d, start, stop), start, seed)

    @property
    def stop(self) -> int:
        return self.start + len(self.deltas)

    def covers(self, k0: int, n: int) -> bool:
        return k0 >= self.start and k0 + n <= self.stop

    def window(self, k0: int, n: int) -> np.ndarray:
        """Delta_{k0}, ..., Delta_{k0+n-1}."""
        if not self.covers(k0, n):
            raise WindowUnderrun(
                f"noise window [{self.start}, {self.stop}) does not cover [{k0}, {k0 + n})")
        out = np.array(self.deltas[k0 - self.start: k0 - self.start + n])
        for k, m in self.overrides.items():
            if k0 <= k < k0 + n:
                out[k - k0] = m
        return out

    def __getitem__(self, k: int) -> np.ndarray:
        return self.window(k, 1)[0]

    def shifted(self, m: int) -> "NoiseRealization":
        return NoiseRealization(self.epsilon, self.deltas, self.start - m, self.seed,
                                {k - m: v for k, v in self.overrides.items()})

    def with_replaced(self, k: int, delta) -> "NoiseRealization":
        ov = dict(self.overrides)
        ov[k] = np.asarray(delta, dtype=float)
        return NoiseRealization(self.epsilon, self.deltas, self.start, self.seed, ov)

    def with_epsilon(self, epsilon: float) -> "NoiseRealization":
        return NoiseRealization(float(epsilon), self.deltas, self.start, self.seed, self.overrides)


def perturbed_matrices(sys, noise: NoiseRealization, omega, n: int, k0: int = 0) -> np.ndarray:
    """A(sigma^k omega) + eps Delta_k for k = k0 .. k0+n-1."""
    base = sys.matrices(sys.shift(omega, k0) if k0 else omega, n)
    if noise.epsilon == 0:
        noise.window(k0, n)
        return base
    return base + noise.epsilon * noise.window(k0, n)


def perturbed_block(sys, noise: NoiseRealization, omega, n: int) -> np.ndarray:
    """(A(sigma^{n-1} omega) + eps Delta_{n-1}) ... (A(omega) + eps Delta_0)."""
    if n < 1:
        raise ValueError("block length must be at least 1")
    return product(perturbed_matrices(sys, noise, omega, n))


# --------------------------------------------------------------------------
# Block length


def log_norm_integral(sys, omega=0, n_mc: int = 20_000) -> float:
    """Orbit average of g = log(||A|| + 1), an estimate of its integral."""
    mats = sys.matrices(omega, n_mc)
    return float(np.mean(np.log(np.linalg.norm(mats, 2, axis=(-2, -1)) + 1.0)))


def block_length_constant(sys, omega=0, n_mc: int = 20_000) -> float:
    """C = 1 / (2 * integral of log(||A|| + 1))."""
    return 1.0 / (2.0 * log_norm_integral(sys, omega, n_mc))


def block_length(epsilon: float, c: float) -> int:
    """N = floor(C |log eps|), at least 1."""
    return max(1, int(math.floor(c * abs(math.log(epsilon)))))


@dataclass(frozen=True, eq=False)
class PerturbedCocycle:
    """The cocycle A(sigma^t omega0) + eps Delta_t seen as a cocycle over integer times t.

    States are time offsets from the base point ``omega0``; shifting a state
    shifts the driver and the noise sequence together.
    """

    base: CocycleSystem
    noise: NoiseRealization
    omega0: object = 0

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def epsilon(self) -> float:
        return self.noise.epsilon

    def shift(self, t: int, k: int = 1) -> int:
        return int(t) + int(k)

    def matrices(self, t: int, n: int) -> np.ndarray:
        return perturbed_matrices(self.base, self.noise, self.omega0, n, k0=int(t))

    def matrix(self, t: int) -> np.ndarray:
        return self.matrices(t, 1)[0]

    def unperturbed_state(self, t: int):
        return self.base.shift(self.omega0, t) if t else self.omega0

    def scaled(self, c):
        return PerturbedCocycle(self.base.scaled(c), self.noise.with_epsilon(c * self.noise.epsilon),
                                self.omega0)

    def dual(self):
        return DualCocycle(self)
