"""
=============================================================================
DESK-SCALE TRAINER
=============================================================================

PURPOSE:
    Show that a factor chain trains by plain gradient descent through its
    analytic backward pass. Two toy tasks stand in for fine-tuning:

    matrix_recovery
        Fit chain_forward(ch, x) to dW* x, where dW* comes from a random
        chain of the same shape (so an exact fit exists). Success: relative
        Frobenius error of the reconstructed dW below 1e-2.

    frozen_linear_regression
        A frozen random W plus the adapter, fit to data from W + D*.
        Only the adapter trains. Success: test loss below 10% of its
        starting value.

WHAT IT DOES:
    1. Seeds one numpy Generator for the whole run
    2. Builds the target and a zero-initialized adapter (dW = 0)
    3. Runs AdamW on minibatch mean squared error
    4. Optionally spot-checks the minibatch gradient it is about to apply
       against finite differences of the same minibatch loss
    5. Returns a TrainLog
"""

# =============================================================================
# IMPORTS
# =============================================================================
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from cdvft.chain import adapter_apply, chain_backward, chain_forward, init_chain, reconstruct_dense
from cdvft.complexity import AdapterConfig, Method
from cdvft.errors import ConfigError, GradientCheckError, ShapeError, TrainingDivergedError
from cdvft.gradcheck import DEFAULT_TOL, check_loss_gradient

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
DEFAULT_LR = 1e-2
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.0

TASK_KINDS = ('matrix_recovery', 'frozen_linear_regression')
SCHEDULES = ('constant', 'cosine')
COSINE_FLOOR = 0.1          # cosine schedule decays to 10% of the base lr

RECOVERY_TARGET = 1e-2      # relative Frobenius error
FROZEN_TARGET = 0.1         # final / initial test loss
TEST_BATCH = 256
VERIFY_COORDINATES = 4      # sampled coordinates per parameter array


# =============================================================================
# TYPES
# =============================================================================

@dataclass
class OptimizerState:
    lr: float = DEFAULT_LR
    betas: tuple = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    step: int = 0
    exp_avg: list = None
    exp_avg_sq: list = None
    base_lr: float = None

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.base_lr = state.lr
        state.exp_avg = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.exp_avg_sq = [np.zeros_like(p, dtype=np.float64) for p in params]
        return state


@dataclass
class ToyTask:
    kind: str
    d_out: int
    d_in: int
    batch_size: int = 64
    steps: int = 2000
    seed: int = 0
    schedule: str = 'cosine'
    log_every: int = 100
    verify_every: int = 0
    target_scale: float = 1.0

    def validate(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        for name in ('d_out', 'd_in', 'batch_size'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        return self


@dataclass
class TrainLog:
    kind: str
    losses: list = field(default_factory=list)
    steps: int = 0
    initial_loss: float = None
    final_loss: float = None
    final_relative_error: float = None
    backbone_test_loss: float = None
    initial_test_loss: float = None
    final_test_loss: float = None
    gradient_checks: int = 0
    succeeded: bool = False
    adapter: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            'kind': self.kind,
            'steps': self.steps,
            'initial_loss': self.initial_loss,
            'final_loss': self.final_loss,
            'final_relative_error': self.final_relative_error,
            'backbone_test_loss': self.backbone_test_loss,
            'initial_test_loss': self.initial_test_loss,
            'final_test_loss': self.final_test_loss,
            'gradient_checks': self.gradient_checks,
            'succeeded': self.succeeded,
            'losses': self.losses,
        }


# =============================================================================
# OPTIMIZER
# =============================================================================

def adamw_step(state, params, grads):
    """
    One AdamW update with decoupled weight decay. Returns the new parameter
    arrays; moments and step count in `state` are advanced in place.

        p <- p - lr * wd * p
        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """
    if len(params) != len(grads) or len(params) != len(state.exp_avg):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at step {state.step + 1}")

    beta1, beta2 = state.betas
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step

    updated = []
    for k, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape or p.shape != state.exp_avg[k].shape:
            raise ShapeError(f"parameter {k}: shape {p.shape} vs gradient {g.shape}")
        state.exp_avg[k] = beta1 * state.exp_avg[k] + (1.0 - beta1) * g
        state.exp_avg_sq[k] = beta2 * state.exp_avg_sq[k] + (1.0 - beta2) * g * g
        m_hat = state.exp_avg[k] / bias1
        v_hat = state.exp_avg_sq[k] / bias2
        decayed = p - state.lr * state.weight_decay * p
        updated.append(decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated


def scheduled_lr(base_lr, step, total, schedule):
    if schedule == 'constant' or total <= 1:
        return base_lr
    progress = min(step / (total - 1), 1.0)
    return base_lr * (COSINE_FLOOR + (1.0 - COSINE_FLOOR) * 0.5 * (1.0 + math.cos(math.pi * progress)))


# =============================================================================
# SHARED TRAINING LOOP
# =============================================================================

def _check_task(cfg, task, kind):
    cfg.validate()
    task.validate()
    if cfg.method is not Method.CDVFT:
        raise ConfigError(f"toy tasks train CDVFT adapters, got {cfg.method.value}")
    if task.kind != kind:
        raise ConfigError(f"expected a {kind} task, got {task.kind}")
    if (task.d_out, task.d_in) != (cfg.d_out, cfg.d_in):
        raise ConfigError(
            f"task dims {task.d_out}x{task.d_in} do not match adapter {cfg.d_out}x{cfg.d_in}"
        )


def _mse(residual, step=None):
    loss = float(np.mean(residual * residual))
    if step is not None and not math.isfinite(loss):
        raise TrainingDivergedError(f"loss became {loss} at step {step}")
    return loss


def mse_gradient(residual):
    """Gradient of mean(residual ** 2) with respect to the residual."""
    return 2.0 * residual / residual.size


def _train(ch, task, optimizer, sample_batch, residual_of, log):
    """
    AdamW over task.steps minibatches.

    sample_batch() -> x draws the next batch; residual_of(x) -> (residual, tape)
    runs the adapter forward. The loss is mean(residual ** 2).
    """
    for step in range(task.steps):
        x = sample_batch()
        residual, tape = residual_of(x)
        loss = _mse(residual, step)
        grads = chain_backward(ch, tape, mse_gradient(residual)).ordered()
        log.losses.append(loss)
        if step == 0:
            log.initial_loss = loss

        if task.verify_every and step % task.verify_every == 0:
            _verify_gradients(ch, lambda: _mse(residual_of(x)[0]), grads, task.seed + step)
            log.gradient_checks += 1

        optimizer.lr = scheduled_lr(optimizer.base_lr, step, task.steps, task.schedule)
        ch.assign_parameters(adamw_step(optimizer, ch.parameters(), grads))

        if task.log_every and (step % task.log_every == 0 or step == task.steps - 1):
            logger.info(f"  step {step:>6}: loss {loss:.6e}")
    log.steps = task.steps


def _verify_gradients(ch, batch_loss, grads, seed):
    # own generator: checks must not shift the training stream
    rng = np.random.default_rng(seed)
    errors = check_loss_gradient(ch, batch_loss, grads, rng, coordinates=VERIFY_COORDINATES)
    worst = max(errors.values())
    if worst > DEFAULT_TOL:
        raise GradientCheckError(f"gradient spot check failed: max relative error {worst:.3e} ({errors})")


def _make_optimizer(ch, lr, betas, eps, weight_decay):
    return OptimizerState.for_params(
        ch.parameters(), lr=lr, betas=betas, eps=eps, weight_decay=weight_decay
    )


def _target_chain(cfg, seed, scale):
    target = init_chain(cfg, seed, interior_init='normal', zero_last=False)
    if scale != 1.0:
        values = target.parameters()
        values[-1] = values[-1] * scale
        target.assign_parameters(values)
    return target


# =============================================================================
# TASKS
# =============================================================================

def run_matrix_recovery(cfg, task, lr=DEFAULT_LR, betas=DEFAULT_BETAS, eps=DEFAULT_EPS,
                        weight_decay=DEFAULT_WEIGHT_DECAY, target=None):
    """
    Fit a zero-initialized chain to a realizable target dW*.

    target: optional FactorChain (or dense d_out x d_in matrix) to recover;
    by default a random chain of cfg's shape drawn from the task seed.
    """
    _check_task(cfg, task, 'matrix_recovery')
    rng = np.random.default_rng(task.seed)
    adapter_seed, target_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))

    ch = init_chain(cfg, adapter_seed)
    if target is None:
        target = _target_chain(cfg, target_seed, task.target_scale)
    target_dense = target if isinstance(target, np.ndarray) else reconstruct_dense(target)
    target_norm = float(np.linalg.norm(target_dense))

    def relative_error():
        diff = reconstruct_dense(ch) - target_dense
        if target_norm == 0.0:
            return float(np.linalg.norm(diff))
        return float(np.linalg.norm(diff) / target_norm)

    def sample_batch():
        return rng.standard_normal((cfg.d_in, task.batch_size))

    def residual_of(x):
        delta_h, tape = chain_forward(ch, x)
        return delta_h - target_dense @ x, tape

    logger.info(f"matrix recovery: {cfg.d_out}x{cfg.d_in}, m={cfg.m}, p={cfg.p}, "
                f"{task.steps} steps, batch {task.batch_size}")
    log = TrainLog(kind=task.kind)
    optimizer = _make_optimizer(ch, lr, betas, eps, weight_decay)
    _train(ch, task, optimizer, sample_batch, residual_of, log)

    log.final_relative_error = relative_error()
    log.final_loss = log.losses[-1] if log.losses else None
    log.succeeded = log.final_relative_error < RECOVERY_TARGET
    log.adapter = ch
    logger.info(f"  final relative error {log.final_relative_error:.3e}")
    return log


def run_frozen_linear(cfg, task, lr=DEFAULT_LR, betas=DEFAULT_BETAS, eps=DEFAULT_EPS,
                      weight_decay=DEFAULT_WEIGHT_DECAY, target=None):
    """
    Train only the adapter on data from a shifted linear map W + D*.

    target: optional FactorChain (or dense matrix) whose alpha * dW is D*;
    pass a zero matrix for the no-shift case.
    """
    _check_task(cfg, task, 'frozen_linear_regression')
    rng = np.random.default_rng(task.seed)
    adapter_seed, target_seed = (int(s) for s in rng.integers(0, 2**31 - 1, size=2))

    W = rng.standard_normal((cfg.d_out, cfg.d_in)) / math.sqrt(cfg.d_in)
    ch = init_chain(cfg, adapter_seed)
    if target is None:
        target = _target_chain(cfg, target_seed, task.target_scale)
    shift = target if isinstance(target, np.ndarray) else reconstruct_dense(target)
    target_map = W + shift
    x_test = rng.standard_normal((cfg.d_in, TEST_BATCH))
    y_test = target_map @ x_test

    def test_loss():
        return _mse(adapter_apply(W, ch, x_test) - y_test)

    def sample_batch():
        return rng.standard_normal((cfg.d_in, task.batch_size))

    def residual_of(x):
        delta_h, tape = chain_forward(ch, x)
        return W @ x + delta_h - target_map @ x, tape

    logger.info(f"frozen linear: {cfg.d_out}x{cfg.d_in}, m={cfg.m}, p={cfg.p}, "
                f"{task.steps} steps, batch {task.batch_size}")
    log = TrainLog(kind=task.kind)
    log.backbone_test_loss = _mse(W @ x_test - y_test)
    log.initial_test_loss = test_loss()
    optimizer = _make_optimizer(ch, lr, betas, eps, weight_decay)
    _train(ch, task, optimizer, sample_batch, residual_of, log)

    log.final_test_loss = test_loss()
    log.final_loss = log.losses[-1] if log.losses else None
    if log.initial_test_loss == 0.0:
        log.succeeded = log.final_test_loss <= 1e-12
    else:
        log.succeeded = log.final_test_loss < FROZEN_TARGET * log.initial_test_loss
    log.adapter = ch
    logger.info(f"  test loss {log.initial_test_loss:.3e} -> {log.final_test_loss:.3e}")
    return log


def default_config(d_out, d_in, m=2, p=None, alpha=1.0):
    """CDVFT AdapterConfig for toy runs (p defaults to max(d_out, d_in))."""
    return AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=m,
                         p=p or max(d_out, d_in), alpha=alpha).validate()
