"""Sign-ascent attacks with a Gaussian posterior over perturbations.

bim_attack is plain iterative sign ascent on the loss. anda_attack
additionally averages every augmentation gradient seen along the
trajectory (each step follows the sign of that running mean) and records
the deviation of each gradient from the running mean at insertion time,
yielding a low-rank Gaussian N(mean, D D^T / (count - 1)) over flat
perturbations. multianda_attack runs K independent chains from uniformly
jittered starts and combines them as an even mixture. Strategy S1 emits
the final iterate; strategy S2 crafts adversaries from the penultimate
iterate using perturbations drawn from the posterior.

epsilon, step_size, and init_radius are configured on the 0-255 pixel
scale and divided by 255 internally; pixel values live in [0, 1].
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import grad
from .augment import translate, translate_adjoint, translation_offsets
from .errors import ConfigError, InvariantViolation, ModelError
from .rng import child_seed, stream

BALL_SLACK = 1e-9
STRATEGIES = ("S1", "S2")
ATTACK_KINDS = ("bim", "anda", "multianda")


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters (radii on the 0-255 scale).

    step_size defaults to epsilon / steps and must not exceed epsilon.
    accumulate=False replaces the running-mean step direction with the
    sign of the current step's batch-mean gradient only (ablation knob);
    include_identity appends the untranslated image to even-sided grids.
    """

    epsilon: float = 16.0
    steps: int = 10
    step_size: float = None
    aug_count: int = 25
    augmax: float = 0.3
    ensemble_k: int = 5
    init_radius: float = 0.5
    sample_count: int = 20
    strategy: str = "S1"
    seed: int = 0
    accumulate: bool = True
    include_identity: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / self.steps)
        if not 0 < self.step_size <= self.epsilon:
            raise ConfigError(
                f"step_size must lie in (0, epsilon], got {self.step_size} with epsilon {self.epsilon}"
            )
        translation_offsets(self.aug_count, self.augmax)  # validates aug_count and augmax
        if self.ensemble_k < 1:
            raise ConfigError(f"ensemble_k must be at least 1, got {self.ensemble_k}")
        if self.init_radius < 0:
            raise ConfigError(f"init_radius must be non-negative, got {self.init_radius}")
        if self.sample_count < 0:
            raise ConfigError(f"sample_count must be non-negative, got {self.sample_count}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not -(2**63) <= int(self.seed) < 2**63:
            raise ConfigError("seed must fit in a signed 64-bit integer")

    @property
    def eps01(self):
        return self.epsilon / 255.0

    @property
    def alpha01(self):
        return self.step_size / 255.0

    @property
    def gamma01(self):
        return self.init_radius / 255.0

    def grid(self):
        return translation_offsets(self.aug_count, self.augmax, self.include_identity)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(f"bad attack config fields: {exc}") from exc


@dataclass(frozen=True)
class PerturbationPosterior:
    """Low-rank Gaussian over flat perturbations.

    mean is the running average of all stored gradients; deviations
    holds one column per gradient, taken against the running mean at the
    moment the column was appended; the implied covariance
    deviations @ deviations.T / (count - 1) is never materialized.
    anchor is the penultimate iterate of the chain that produced it.
    """

    mean: np.ndarray
    deviations: np.ndarray
    count: int
    anchor: np.ndarray

    def __post_init__(self):
        if self.mean.ndim != 1 or not np.all(np.isfinite(self.mean)):
            raise ModelError("posterior mean must be a finite flat vector")
        if self.deviations.shape != (self.mean.shape[0], self.count):
            raise ModelError(
                f"deviation matrix shape {self.deviations.shape} does not match "
                f"(dimension {self.mean.shape[0]}, count {self.count})"
            )
        if self.anchor.size != self.mean.shape[0]:
            raise ModelError("anchor size does not match the posterior dimension")


@dataclass(frozen=True)
class MixturePosterior:
    """Even mixture of per-chain posteriors with their averaged anchor."""

    components: tuple
    avg_anchor: np.ndarray
    mean_perturbation: np.ndarray

    def __post_init__(self):
        if not self.components:
            raise ModelError("mixture needs at least one component")
        d = self.components[0].mean.shape[0]
        if any(c.mean.shape[0] != d for c in self.components):
            raise ModelError("mixture components must share one dimension")


@dataclass(frozen=True)
class AdversaryBatch:
    """Originals, their crafted adversaries, and the config that made them.

    adversaries is (N, ...) for strategy S1 and (N, M, ...) for S2; S2
    batches also carry the final iterates in s1_adversaries so both can
    be evaluated from one artifact. Every adversary must stay inside the
    epsilon ball around its original and inside the [0, 1] pixel range.
    """

    originals: np.ndarray
    adversaries: np.ndarray
    labels: np.ndarray
    config: AttackConfig
    attack: str
    s1_adversaries: np.ndarray = None
    source: str = ""

    @property
    def count(self):
        return self.originals.shape[0]

    def primary_adversaries(self):
        """The one-per-input adversaries (final iterates for S2 batches)."""
        return self.s1_adversaries if self.config.strategy == "S2" else self.adversaries

    def validate(self):
        """Recompute the ball and range invariants; raise on any violation."""
        if self.count == 0:
            return
        limit = self.config.eps01 + BALL_SLACK
        stacks = [("adversaries", self.adversaries)]
        if self.s1_adversaries is not None:
            stacks.append(("s1_adversaries", self.s1_adversaries))
        for name, stack in stacks:
            originals = self.originals
            if stack.ndim == originals.ndim + 1:
                originals = originals[:, None]
            gap = np.abs(stack - originals).max()
            if gap > limit:
                raise InvariantViolation(
                    f"{name} leave the epsilon ball: max deviation {gap:.9f} > {limit:.9f}"
                )
            if stack.min() < 0.0 or stack.max() > 1.0:
                raise InvariantViolation(f"{name} contain pixels outside [0, 1]")


def clip_to_ball(candidate, origin, epsilon):
    """Clamp into the epsilon ball around origin intersected with [0, 1].

    epsilon is on the internal [0, 1] scale here.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if candidate.shape != origin.shape:
        raise ModelError(f"shape mismatch: candidate {candidate.shape} vs origin {origin.shape}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    low = np.maximum(origin - epsilon, 0.0)
    high = np.minimum(origin + epsilon, 1.0)
    return np.minimum(np.maximum(candidate, low), high)


def accumulate_mean(prev_mean, t, n, step_grads):
    """Running mean after step t: (t*n*prev + sum of n new gradients) / ((t+1)*n)."""
    prev_mean = np.asarray(prev_mean, dtype=np.float64)
    step_grads = np.asarray(step_grads, dtype=np.float64)
    if t < 0:
        raise ModelError(f"step index must be non-negative, got {t}")
    if step_grads.ndim != 2 or step_grads.shape != (n, prev_mean.shape[0]):
        raise ModelError(
            f"expected {n} gradients of dimension {prev_mean.shape[0]}, got shape {step_grads.shape}"
        )
    return (t * n * prev_mean + step_grads.sum(axis=0)) / ((t + 1) * n)


def append_deviations(posterior, step_grads, new_mean):
    """Append one deviation column (gradient - new_mean) per step gradient.

    Returns the updated posterior with mean replaced by new_mean and the
    count grown by the number of gradients.
    """
    step_grads = np.asarray(step_grads, dtype=np.float64)
    new_mean = np.asarray(new_mean, dtype=np.float64)
    if step_grads.ndim != 2 or step_grads.shape[1] != posterior.mean.shape[0]:
        raise ModelError(f"gradient block shape {step_grads.shape} does not match the posterior")
    if new_mean.shape != posterior.mean.shape:
        raise ModelError("new_mean dimension does not match the posterior")
    columns = (step_grads - new_mean).T
    return replace(
        posterior,
        mean=new_mean,
        deviations=np.concatenate([posterior.deviations, columns], axis=1),
        count=posterior.count + step_grads.shape[0],
    )


def _resolve_model(model):
    """Accept either an op graph or anything carrying a .graph() factory."""
    factory = getattr(model, "graph", None)
    return factory() if callable(factory) else model


def _augmented_gradients(model, x_t, y, grid):
    """Loss gradients at every translated copy, mapped back through the adjoint.

    Returns one flat gradient row per grid offset.
    """
    batch = np.stack([translate(x_t, tx, ty) for tx, ty in grid.offsets])
    grads = grad.batch_input_gradients(model, batch, y)
    pulled = [translate_adjoint(g, tx, ty) for (tx, ty), g in zip(grid.offsets, grads)]
    return np.stack([p.reshape(-1) for p in pulled])


def _anda_run(model, x_start, clip_origin, y, config):
    """One averaged sign-ascent chain; returns (final iterate, posterior)."""
    x_start = np.asarray(x_start, dtype=np.float64)
    grid = config.grid()
    n = grid.n
    d = x_start.size
    posterior = PerturbationPosterior(
        mean=np.zeros(d), deviations=np.zeros((d, 0)), count=0, anchor=x_start.copy()
    )
    x_t = x_start.copy()
    for t in range(config.steps):
        step_grads = _augmented_gradients(model, x_t, y, grid)
        new_mean = accumulate_mean(posterior.mean, t, n, step_grads)
        posterior = append_deviations(posterior, step_grads, new_mean)
        posterior = replace(posterior, anchor=x_t)
        if config.accumulate:
            direction = new_mean
        else:
            direction = accumulate_mean(np.zeros(d), 0, n, step_grads)
        step = config.alpha01 * np.sign(direction).reshape(x_t.shape)
        x_t = clip_to_ball(x_t + step, clip_origin, config.eps01)
    return x_t, posterior


def bim_attack(model, x, y, config):
    """Iterative sign ascent: each step follows the sign of the current gradient."""
    x = np.asarray(x, dtype=np.float64)
    degenerate = replace(config, aug_count=1, augmax=0.0, accumulate=False, include_identity=False)
    adversary, _ = _anda_run(_resolve_model(model), x, x, y, degenerate)
    return adversary


def anda_attack(model, x, y, config):
    """Averaged sign ascent over the translation grid.

    Per iteration: gradients at every translated copy are pulled back
    through the translation adjoint, folded into the running mean, and
    their deviations from that updated mean are stored; the iterate then
    takes one clipped step along the sign of the running mean. Returns
    the final iterate and the populated posterior (anchored at the
    penultimate iterate).
    """
    x = np.asarray(x, dtype=np.float64)
    return _anda_run(_resolve_model(model), x, x, y, config)


def sample_perturbation(posterior, rng):
    """Draw mean + D z / sqrt(count - 1) with z standard normal.

    This is an exact sample from the low-rank Gaussian with covariance
    D D^T / (count - 1) without materializing that matrix.
    """
    c = posterior.count
    if c < 2:
        raise ConfigError(
            f"sampling needs at least 2 stored gradients (covariance undefined), got {c}"
        )
    z = rng.standard_normal(c)
    return posterior.mean + posterior.deviations @ z / np.sqrt(c - 1.0)


def craft_from_sample(posterior, delta_m, origin, config):
    """One sampled adversary: a sign step along delta_m from the anchor.

    The result is clipped around origin, so it satisfies the same ball
    and range invariants as the final iterate.
    """
    delta = np.asarray(delta_m, dtype=np.float64)
    if delta.size != posterior.anchor.size:
        raise ModelError(f"sample dimension {delta.size} does not match the anchor")
    step = config.alpha01 * np.sign(delta).reshape(posterior.anchor.shape)
    return clip_to_ball(posterior.anchor + step, origin, config.eps01)


def sample_stream(seed, k, m):
    """The RNG stream for sample m of mixture component k."""
    return stream(seed, "component", k, "sample", m)


def _env_threads():
    raw = os.environ.get("ANDA_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"ANDA_THREADS must be an integer, got {raw!r}") from exc


def multianda_attack(model, x, y, config, threads=None):
    """K independent chains from uniformly jittered starts, evenly mixed.

    Component k starts at x + u_k with u_k drawn uniformly from
    [-init_radius, init_radius] (own stream per component) and runs a
    full chain clipped around its own start. The ensemble adversary is
    one final sign step along the average of the component means, taken
    from the average penultimate iterate and clipped around the original
    x. Components may run on a thread pool (ANDA_THREADS); results are
    reduced in component order, so the output is schedule-independent.
    """
    x = np.asarray(x, dtype=np.float64)
    graph = _resolve_model(model)
    total = config.ensemble_k

    def run_component(k):
        if config.gamma01 > 0.0:
            noise = stream(config.seed, "component", k).uniform(
                -config.gamma01, config.gamma01, size=x.shape
            )
            start = x + noise
        else:
            start = x.copy()
        return _anda_run(graph, start, start, y, config)

    workers = _env_threads() if threads is None else max(1, int(threads))
    if workers > 1 and total > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_component, range(total)))
    else:
        results = [run_component(k) for k in range(total)]

    components = tuple(posterior for _, posterior in results)
    avg_anchor = np.mean(np.stack([c.anchor for c in components]), axis=0)
    mean_perturbation = np.mean(np.stack([c.mean for c in components]), axis=0)
    step = config.alpha01 * np.sign(mean_perturbation).reshape(x.shape)
    adversary = clip_to_ball(avg_anchor + step, x, config.eps01)
    mixture = MixturePosterior(
        components=components, avg_anchor=avg_anchor, mean_perturbation=mean_perturbation
    )
    return adversary, mixture


def multianda_sample(mixture, m_index, origin, config):
    """One mixture sample: average one draw per component, craft, and clip.

    Component draws use streams keyed by (seed, component, sample index),
    so samples are reproducible regardless of evaluation order.
    """
    draws = [
        sample_perturbation(component, sample_stream(config.seed, k, m_index))
        for k, component in enumerate(mixture.components)
    ]
    delta_m = np.mean(np.stack(draws), axis=0)
    step = config.alpha01 * np.sign(delta_m).reshape(mixture.avg_anchor.shape)
    return clip_to_ball(mixture.avg_anchor + step, origin, config.eps01)


def validate_attack_request(attack, config):
    """Reject attack/strategy combinations that cannot produce output."""
    if attack not in ATTACK_KINDS:
        raise ConfigError(f"attack must be one of {ATTACK_KINDS}, got {attack!r}")
    if config.strategy == "S2":
        if attack == "bim":
            raise ConfigError("strategy S2 needs a posterior; use attack=anda or attack=multianda")
        if config.grid().n * config.steps < 2:
            raise ConfigError("strategy S2 needs at least 2 accumulated gradients per chain")
        if config.sample_count < 1:
            raise ConfigError("strategy S2 needs sample_count >= 1")


def attack_batch(model, images, labels, attack, config, source=""):
    """Craft adversaries for a whole batch of inputs.

    Every input gets its own seed derived from (config.seed, input index),
    so per-input results do not depend on batch composition. Returns a
    validated AdversaryBatch; S2 batches hold both the sampled adversaries
    and the final iterates. source names the attacked model so reports
    can mark white-box cells no matter what the batch is called later.
    """
    validate_attack_request(attack, config)
    model = _resolve_model(model)
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ModelError(f"got {images.shape[0]} images but {labels.shape[0]} labels")

    crafted = []
    finals = []
    for i in range(images.shape[0]):
        cfg = replace(config, seed=child_seed(config.seed, "input", i))
        x, y = images[i], int(labels[i])
        if attack == "bim":
            crafted.append(bim_attack(model, x, y, cfg))
            continue
        if attack == "anda":
            adversary, posterior = anda_attack(model, x, y, cfg)
            if config.strategy == "S2":
                samples = [
                    craft_from_sample(
                        posterior, sample_perturbation(posterior, sample_stream(cfg.seed, 0, m)), x, cfg
                    )
                    for m in range(config.sample_count)
                ]
                crafted.append(np.stack(samples))
                finals.append(adversary)
            else:
                crafted.append(adversary)
        else:
            adversary, mixture = multianda_attack(model, x, y, cfg)
            if config.strategy == "S2":
                samples = [
                    multianda_sample(mixture, m, x, cfg) for m in range(config.sample_count)
                ]
                crafted.append(np.stack(samples))
                finals.append(adversary)
            else:
                crafted.append(adversary)

    shape = images.shape[1:]
    if config.strategy == "S2" and attack != "bim":
        adversaries = (
            np.stack(crafted) if crafted else np.zeros((0, config.sample_count) + shape)
        )
        s1 = np.stack(finals) if finals else np.zeros((0,) + shape)
    else:
        adversaries = np.stack(crafted) if crafted else np.zeros((0,) + shape)
        s1 = None
    batch = AdversaryBatch(
        originals=images,
        adversaries=adversaries,
        labels=labels,
        config=config,
        attack=attack,
        s1_adversaries=s1,
        source=source,
    )
    batch.validate()
    return batch
