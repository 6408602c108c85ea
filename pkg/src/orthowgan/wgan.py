"""Training engines: synthetic samplers, Adam, and the seven critic schemes.

Schemes
-------
clip          5 critic steps per generator step, weights clamped to [-c, c]
gp            5 critic steps, equal learning rates, two-sided gradient penalty
ttur          1 critic step, faster critic learning rate, two-sided penalty
ortho_reg     ttur rates, soft orthogonality penalty on every critic weight
ortho_cayley  critic weights moved by a Cayley rotation on the Stiefel manifold
ortho_bjorck  Adam step followed by one Bjorck orthogonalization step
proposed      blended schedule: full Bjorck projection early in training,
              annealed out by sigma = sigmoid(i - k) while a one-sided
              gradient penalty weighted by lambda * sigma takes over

Rows are samples everywhere; expectations are sample means over rows. One
training run owns its state and is single-threaded; distinct runs (seeds,
schemes) are independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import BoundMlp, MlpParams, Tape, bind, gradient_penalty_node, mlp
from .metrics import interpolate_grad_norms
from .ortho import bjorck_blend, bjorck_step, cayley_update, gram_deviation, svd_reinit

SCHEMES = ("clip", "gp", "ttur", "ortho_reg", "ortho_cayley", "ortho_bjorck", "proposed")

# Penalty weight sigma below this threshold is treated as exactly off, which
# skips interpolate sampling and the second-order backward pass entirely.
SIGMA_SKIP = 1e-3

# Per-scheme (eta_d, eta_g, n_critic); None falls through to the global default.
_SCHEME_DEFAULTS = {
    "clip": (None, None, 5),
    "gp": (1e-4, 1e-4, 5),
    "ttur": (3e-4, 1e-4, 1),
    "ortho_reg": (3e-4, 1e-4, 1),
    "ortho_cayley": (None, None, 1),
    "ortho_bjorck": (None, None, 1),
    "proposed": (None, None, 1),
}


class DivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient; carries partial state."""

    def __init__(self, message: str, state: Optional["TrainState"] = None):
        super().__init__(message)
        self.state = state


@dataclass
class DatasetSpec:
    """2-D synthetic target distribution: two-arm spiral or 8-Gaussian ring."""

    kind: str = "spiral"
    # spiral parameters (Archimedean, two arms)
    turns: float = 2.0
    noise_sigma: float = 0.05
    arms: int = 2
    # ring parameters
    modes: int = 8
    radius: float = 2.0
    mode_sigma: float = 0.1

    dim: int = 2

    def validate(self) -> "DatasetSpec":
        if self.kind not in ("spiral", "gaussian_ring"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "spiral":
            if self.turns <= 0 or self.noise_sigma <= 0:
                raise ValueError("spiral turns and noise_sigma must be positive")
            if self.arms != 2:
                raise ValueError("spiral sampler is defined for exactly 2 arms")
        else:
            if self.modes != 8:
                raise ValueError("gaussian_ring is defined for exactly 8 modes")
            if self.radius <= 0 or self.mode_sigma <= 0:
                raise ValueError("ring radius and mode_sigma must be positive")
        if self.dim != 2:
            raise ValueError("only 2-D data is supported")
        return self


def sample_real(spec: DatasetSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m i.i.d. samples. Draw order (position params, arm/mode, noise)
    is fixed so runs are reproducible from the generator state."""
    if m < 1:
        raise ValueError("m must be >= 1")
    spec.validate()
    if spec.kind == "spiral":
        t_max = spec.turns * 2.0 * np.pi
        t = rng.uniform(0.0, t_max, size=m)
        arm = rng.integers(0, 2, size=m)
        r = t / t_max
        ang = t + arm * np.pi
        pts = np.column_stack((r * np.cos(ang), r * np.sin(ang)))
        return pts + rng.normal(0.0, spec.noise_sigma, size=(m, 2))
    centers_ang = 2.0 * np.pi * np.arange(spec.modes) / spec.modes
    centers = spec.radius * np.column_stack((np.cos(centers_ang), np.sin(centers_ang)))
    idx = rng.integers(0, spec.modes, size=m)
    return centers[idx] + rng.normal(0.0, spec.mode_sigma, size=(m, 2))


def interpolates(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-row convex combination eps * real + (1 - eps) * fake, eps ~ U[0,1]."""
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch {x_real.shape} vs {x_fake.shape}")
    eps = rng.uniform(0.0, 1.0, size=(x_real.shape[0], 1))
    return eps * x_real + (1.0 - eps) * x_fake


@dataclass
class AdamState:
    """First/second moment accumulators, one entry per parameter tensor."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], beta1=0.0, beta2=0.9, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_direction(state: AdamState, grads: list[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps).

    Raises DivergedError on any non-finite gradient entry. The direction is
    unscaled; callers add lr * dir (critic ascent) or subtract it (generator
    descent).
    """
    state.t += 1
    dirs = []
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise DivergedError("diverged")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - state.beta1 ** state.t)
        v_hat = state.v[i] / (1.0 - state.beta2 ** state.t)
        dirs.append(m_hat / (np.sqrt(v_hat) + state.eps))
    return dirs


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float, ascent: bool
) -> list[np.ndarray]:
    """One Adam update of all parameter tensors (added for ascent)."""
    dirs = adam_direction(state, grads)
    sign = 1.0 if ascent else -1.0
    return [p + sign * lr * d for p, d in zip(params, dirs)]


@dataclass
class TrainConfig:
    scheme: str
    n: int
    seed: int = 0
    eta_d: Optional[float] = None
    eta_g: Optional[float] = None
    n_critic: Optional[int] = None
    batch: int = 64
    lambda_gp: float = 10.0
    lambda_ortho: float = 10.0
    clip_c: float = 0.01
    k: Optional[int] = None
    init_lambda: float = 1.1
    latent_dim: int = 8
    hidden: int = 512
    layers: int = 4
    budget_seconds: float = 0.0
    adam_beta1: float = 0.0
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    cayley_tau_scale: float = 1.0
    diag_every: int = 100
    lipschitz_points: int = 256

    def resolved(self) -> "TrainConfig":
        """Fill per-scheme defaults and validate the invariants."""
        if self.scheme not in SCHEMES:
            raise ValueError(
                f"unknown scheme {self.scheme!r}; valid schemes: {', '.join(SCHEMES)}"
            )
        d_eta_d, d_eta_g, d_nc = _SCHEME_DEFAULTS[self.scheme]
        cfg = replace(
            self,
            eta_d=self.eta_d if self.eta_d is not None else (d_eta_d or 3e-4),
            eta_g=self.eta_g if self.eta_g is not None else (d_eta_g or 1e-4),
            n_critic=self.n_critic if self.n_critic is not None else d_nc,
            k=self.k if self.k is not None else max(1, self.n // 10),
        )
        if cfg.n < 1:
            raise ValueError("n must be >= 1")
        if cfg.eta_d <= 0 or cfg.eta_g <= 0:
            raise ValueError("learning rates must be positive")
        if cfg.lambda_gp <= 0 or cfg.lambda_ortho <= 0:
            raise ValueError("penalty weights must be positive")
        if cfg.batch < 2:
            raise ValueError("batch must be >= 2")
        if cfg.k >= cfg.n and cfg.n > 1:
            raise ValueError(f"k = {cfg.k} must be < n = {cfg.n}")
        if cfg.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if cfg.clip_c <= 0:
            raise ValueError("clip_c must be positive")
        if cfg.init_lambda <= 0:
            raise ValueError("init_lambda must be positive")
        if cfg.layers < 2 or cfg.hidden < 1 or cfg.latent_dim < 1:
            raise ValueError("bad architecture dimensions")
        if cfg.budget_seconds < 0:
            raise ValueError("budget_seconds must be >= 0")
        return cfg


@dataclass
class MetricRow:
    iter: int
    wall_clock_s: float
    critic_loss: float
    gen_loss: float
    gen_grad_norm: float
    iters_per_sec: float
    lipschitz_est: Optional[float] = None
    mean_gram_dev: Optional[float] = None


@dataclass
class TrainState:
    config: TrainConfig
    data: DatasetSpec
    critic: MlpParams
    generator: MlpParams
    adam_critic: AdamState
    adam_gen: AdamState
    rng: np.random.Generator
    iter: int = 0
    metric_log: list[MetricRow] = field(default_factory=list)
    degenerate_rows: int = 0
    total_wall_seconds: float = 0.0
    last_real: Optional[np.ndarray] = None
    last_fake: Optional[np.ndarray] = None


def blend_sigma(i: int, k: int) -> float:
    """Penalty weight schedule sigmoid(i - k); 0.5 exactly at i == k."""
    return float(expit(float(i - k)))


def ortho_penalty_node(tape: Tape, wn: ad.Node, lam: float) -> ad.Node:
    """lam ||W.T W - I||_F^2 as a tape expression (orientation-aware)."""
    rows, cols = wn.value.shape
    if rows < cols:
        g = ad.matmul(wn, ad.transpose(wn))
    else:
        g = ad.matmul(ad.transpose(wn), wn)
    d = ad.sub(g, tape.leaf(np.eye(g.value.shape[0])))
    return ad.scale(ad.sum_all(ad.square(d)), lam)


def critic_objective(
    tape: Tape,
    critic: BoundMlp,
    scheme: str,
    x_real: ad.Node,
    x_fake: ad.Node,
    x_hat: Optional[ad.Node],
    *,
    lambda_gp: float = 10.0,
    lambda_ortho: float = 10.0,
    sigma: float = 0.0,
) -> ad.Node:
    """Maximization objective E[f(real)] - E[f(fake)] minus the scheme's penalty."""
    obj = ad.sub(ad.mean_all(critic.forward(x_real)), ad.mean_all(critic.forward(x_fake)))
    if scheme in ("gp", "ttur"):
        pen = gradient_penalty_node(tape, critic, x_hat, one_sided=False)
        obj = ad.sub(obj, ad.scale(pen, lambda_gp))
    elif scheme == "proposed" and sigma >= SIGMA_SKIP:
        pen = gradient_penalty_node(tape, critic, x_hat, one_sided=True)
        obj = ad.sub(obj, ad.scale(pen, lambda_gp * sigma))
    elif scheme == "ortho_reg":
        for wn in critic.weight_nodes:
            obj = ad.sub(obj, ortho_penalty_node(tape, wn, lambda_ortho))
    return obj


def _row_normalize(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return w / norms


def _apply_critic_update(state: TrainState, dirs: list[np.ndarray], sigma: float) -> None:
    cfg = state.config
    eta = cfg.eta_d
    net = state.critic
    scheme = cfg.scheme
    for i in range(len(net.weights)):
        dw, db = dirs[2 * i], dirs[2 * i + 1].reshape(-1)
        if scheme == "clip":
            net.weights[i] = np.clip(net.weights[i] + eta * dw, -cfg.clip_c, cfg.clip_c)
            net.biases[i] = np.clip(net.biases[i] + eta * db, -cfg.clip_c, cfg.clip_c)
        elif scheme in ("gp", "ttur", "ortho_reg"):
            net.weights[i] = net.weights[i] + eta * dw
            net.biases[i] = net.biases[i] + eta * db
        elif scheme == "ortho_cayley":
            net.biases[i] = net.biases[i] + eta * db
            w = net.weights[i]
            if w.shape[0] >= w.shape[1]:
                # the rotation needs the descent-direction gradient of the
                # minimized quantity; the Adam direction points uphill
                net.weights[i] = cayley_update(w, -dw, eta * cfg.cayley_tau_scale)
            else:
                # wide output layer: the retraction is degenerate, renormalize
                # the rows instead (exact constraint for a single-row matrix)
                net.weights[i] = _row_normalize(w + eta * dw)
        elif scheme == "ortho_bjorck":
            net.weights[i] = bjorck_step(net.weights[i] + eta * dw, 1)
            net.biases[i] = net.biases[i] + eta * db
        elif scheme == "proposed":
            net.weights[i] = bjorck_blend(net.weights[i] + eta * dw, 0.5 * (1.0 - sigma))
            net.biases[i] = net.biases[i] + eta * db
        else:  # pragma: no cover - resolved() rejects unknown schemes
            raise AssertionError(scheme)


def _critic_step(state: TrainState, sigma: float) -> float:
    cfg = state.config
    rng = state.rng
    x_real = sample_real(state.data, cfg.batch, rng)
    z = rng.standard_normal((cfg.batch, cfg.latent_dim))

    tape = Tape()
    bc = bind(tape, state.critic)
    bg = bind(tape, state.generator)
    fake = bg.forward(tape.leaf(z))
    xr = tape.leaf(x_real)
    need_hat = cfg.scheme in ("gp", "ttur") or (cfg.scheme == "proposed" and sigma >= SIGMA_SKIP)
    xh = tape.leaf(interpolates(x_real, fake.value, rng)) if need_hat else None

    obj = critic_objective(
        tape, bc, cfg.scheme, xr, fake, xh,
        lambda_gp=cfg.lambda_gp, lambda_ortho=cfg.lambda_ortho, sigma=sigma,
    )
    j = float(obj.value[0, 0])
    if not np.isfinite(j):
        raise DivergedError(f"non-finite critic objective at iteration {state.iter + 1}", state)
    grads = [g.value for g in ad.grad(obj, bc.params)]
    dirs = adam_direction(state.adam_critic, grads)
    _apply_critic_update(state, dirs, sigma)
    state.degenerate_rows += tape.degenerate_rows
    state.last_real = x_real
    state.last_fake = fake.value
    return j


def _generator_step(state: TrainState) -> tuple[float, float]:
    cfg = state.config
    z = state.rng.standard_normal((cfg.batch, cfg.latent_dim))
    tape = Tape()
    bg = bind(tape, state.generator)
    bc = bind(tape, state.critic)
    fake = bg.forward(tape.leaf(z))
    f = bc.forward(fake)
    loss = ad.scale(ad.mean_all(f), -1.0)
    g_loss = float(loss.value[0, 0])
    if not np.isfinite(g_loss):
        raise DivergedError(f"non-finite generator loss at iteration {state.iter + 1}", state)
    gs = ad.grad(loss, bg.params + [fake])
    grads = [g.value for g in gs[:-1]]
    # cotangent at the generated batch is -(1/m) * grad_x f per row
    fake_cot = gs[-1].value
    gen_grad_norm = float(np.mean(np.linalg.norm(fake_cot, axis=1)) * cfg.batch)
    dirs = adam_direction(state.adam_gen, grads)
    for i in range(len(state.generator.weights)):
        state.generator.weights[i] = state.generator.weights[i] - cfg.eta_g * dirs[2 * i]
        state.generator.biases[i] = state.generator.biases[i] - cfg.eta_g * dirs[2 * i + 1].reshape(-1)
    return g_loss, gen_grad_norm


def _init_state(cfg: TrainConfig, data: DatasetSpec) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    hidden = [cfg.hidden] * (cfg.layers - 1)
    critic = mlp([data.dim] + hidden + [1], rng)
    generator = mlp([cfg.latent_dim] + hidden + [data.dim], rng)
    if cfg.scheme == "proposed":
        critic.weights = [svd_reinit(w, cfg.init_lambda) for w in critic.weights]
    elif cfg.scheme in ("ortho_cayley", "ortho_bjorck"):
        # start exactly on the manifold: the Cayley retraction preserves
        # orthogonality but never creates it, and the first-order Bjorck map
        # diverges for spectra >= sqrt(3)
        critic.weights = [svd_reinit(w, 1.0) for w in critic.weights]
    betas = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    flat_c = [p for pair in zip(critic.weights, critic.biases) for p in pair]
    flat_g = [p for pair in zip(generator.weights, generator.biases) for p in pair]
    return TrainState(
        config=cfg,
        data=data,
        critic=critic,
        generator=generator,
        adam_critic=AdamState.for_params(flat_c, **betas),
        adam_gen=AdamState.for_params(flat_g, **betas),
        rng=rng,
    )


def _run(cfg: TrainConfig, data: DatasetSpec) -> TrainState:
    state = _init_state(cfg, data)
    start = time.perf_counter()
    with threadpool_limits(limits=1):
        # BLAS thread handoff costs more than it saves on these small
        # batched products, and a fixed thread count keeps reductions
        # bit-reproducible across runs
        _train_loop(state, cfg, start)
    state.total_wall_seconds = time.perf_counter() - start
    return state


def _train_loop(state: TrainState, cfg: TrainConfig, start: float) -> None:
    for i in range(1, cfg.n + 1):
        sigma = blend_sigma(i, cfg.k) if cfg.scheme == "proposed" else 0.0
        for _ in range(cfg.n_critic):
            j = _critic_step(state, sigma)
        g_loss, gen_grad_norm = _generator_step(state)
        state.iter = i
        wall = time.perf_counter() - start
        row = MetricRow(
            iter=i,
            wall_clock_s=wall,
            critic_loss=-j,
            gen_loss=g_loss,
            gen_grad_norm=gen_grad_norm,
            iters_per_sec=i / wall if wall > 0 else 0.0,
        )
        if i % cfg.diag_every == 0:
            row.mean_gram_dev = float(
                np.mean([gram_deviation(w) for w in state.critic.weights])
            )
            norms = interpolate_grad_norms(
                state.critic, state.last_real, state.last_fake, cfg.lipschitz_points, state.rng
            )
            row.lipschitz_est = float(norms.max())
        state.metric_log.append(row)


def train(config: TrainConfig, data: DatasetSpec) -> TrainState:
    """Run one training job to its iteration or wall-clock budget.

    Under a wall-clock budget the total iteration count is estimated from a
    200-iteration calibration run and then fixed, so the blend schedule's
    midpoint k = n // 10 is known up front. Divergence raises DivergedError
    with the partial state attached.
    """
    cfg = config.resolved()
    data = data.validate()
    if cfg.budget_seconds > 0.0:
        calib_n = 200
        calib = replace(cfg, n=calib_n, k=max(1, calib_n // 10), budget_seconds=0.0)
        calib_state = _run(calib, data)
        rate = calib_n / max(calib_state.total_wall_seconds, 1e-9)
        n = max(calib_n, int(rate * cfg.budget_seconds))
        cfg = replace(cfg, n=n, k=max(1, n // 10), budget_seconds=0.0)
    return _run(cfg, data)
