"""Graph convolutional network on the extended line graph.

The network maps per-link features [is_virtual, is_server_virtual,
task packet rate, link rate] to a predicted packet arrival rate per
extended link; the contention estimator turns those into link weights.
Gradients are hand-written reverse mode.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .graphs import ExtendedGraph, LineGraph, NodeRole
from .instances import NetworkInstance, stream
from .policy import (
    PolicyResult, build_route_matrices, decide, empirical_latency, evaluate_decision,
    evaluate_policy, task_packet_rates,
)
from .queueing import congestion_flags, estimate_delays, estimate_delays_vjp

log = logging.getLogger(__name__)

DIMS = (4, 32, 32, 32, 32, 1)
LEAK = 0.01
FORMAT_VERSION = 1
AGGREGATIONS = ("self", "neighbor")


@dataclass
class GcnnModel:
    dims: tuple[int, ...]
    theta0: list[np.ndarray]
    theta1: list[np.ndarray]
    activations: tuple[str, ...]
    aggregation: str = "self"
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.theta0)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.theta0, self.theta1) for p in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def with_flat(self, vec) -> "GcnnModel":
        vec = np.asarray(vec, dtype=float)
        t0, t1, i = [], [], 0
        for a, b in zip(self.theta0, self.theta1):
            t0.append(vec[i:i + a.size].reshape(a.shape).copy())
            i += a.size
            t1.append(vec[i:i + b.size].reshape(b.shape).copy())
            i += b.size
        return replace(self, theta0=t0, theta1=t1)

    def copy(self) -> "GcnnModel":
        return self.with_flat(self.flat())


def init_model(seed: int = 0, dims=DIMS, aggregation: str = "self") -> GcnnModel:
    """Fan-scaled uniform init, +-sqrt(6/(fan_in+fan_out)) per matrix."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    rng = stream(seed, 7)
    t0, t1 = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        lim = math.sqrt(6.0 / (a + b))
        t0.append(rng.uniform(-lim, lim, size=(a, b)))
        t1.append(rng.uniform(-lim, lim, size=(a, b)))
    acts = ("leaky_relu",) * (len(dims) - 2) + ("softplus",)
    return GcnnModel(tuple(dims), t0, t1, acts, aggregation, seed)


# ---------------------------------------------------------------- activations

def _act(name, z):
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAK * z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name}")


def _act_grad(name, z):
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAK)
    if name == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # sigmoid
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name}")


# ---------------------------------------------------------------- features

def build_features(ext: ExtendedGraph, tasks) -> np.ndarray:
    X = np.zeros((ext.n_links, 4))
    X[:, 0] = ext.is_virtual
    X[:, 1] = ext.is_server_virtual
    X[:, 3] = ext.rates
    for t in tasks:
        if ext.roles[t.source] != NodeRole.EDGE:
            raise ValueError(f"task source {t.source} is not an edge node")
        X[ext.virtual_link[t.source], 2] += t.job_rate * t.eta
    return X


def _coefficients(lg: LineGraph) -> np.ndarray:
    d = lg.degree.astype(float)
    rows = np.repeat(np.arange(lg.vertex_count), np.diff(lg.indptr))
    return 1.0 / np.sqrt(d[rows] * d[lg.indices])


@dataclass
class ForwardCache:
    inputs: list  # X^{l-1} per layer
    brackets: list  # bracket term per layer
    pre: list  # pre-activations
    coef: np.ndarray = field(repr=False)
    self_form: bool = True


def _bracket(lg, coef, X, self_form):
    return _kernels.laplacian_apply(lg.indptr, lg.indices, coef, np.ascontiguousarray(X), self_form)


def forward(model: GcnnModel, lg: LineGraph, X0):
    X = np.asarray(X0, dtype=float)
    if X.shape != (lg.vertex_count, model.dims[0]):
        raise ValueError(f"features must be ({lg.vertex_count}, {model.dims[0]}), got {X.shape}")
    coef = _coefficients(lg)
    self_form = model.aggregation == "self"
    cache = ForwardCache([], [], [], coef, self_form)
    for th0, th1, act in zip(model.theta0, model.theta1, model.activations):
        B = _bracket(lg, coef, X, self_form)
        Z = X @ th0 + B @ th1
        cache.inputs.append(X)
        cache.brackets.append(B)
        cache.pre.append(Z)
        X = _act(act, Z)
    return X[:, 0] if X.shape[1] == 1 else X, cache


def forward_vjp(model: GcnnModel, lg: LineGraph, cache: ForwardCache, grad_out):
    """Returns (grad_theta0 list, grad_theta1 list, grad wrt input features)."""
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    g0 = [None] * model.n_layers
    g1 = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        gz = g * _act_grad(model.activations[l], cache.pre[l])
        g0[l] = cache.inputs[l].T @ gz
        g1[l] = cache.brackets[l].T @ gz
        # bracket operator is symmetric in both forms
        g = gz @ model.theta0[l].T + _bracket(lg, cache.coef, gz @ model.theta1[l].T, cache.self_form)
    return g0, g1, g


# ---------------------------------------------------------------- pipeline

@dataclass
class Prediction:
    features: np.ndarray
    arrivals: np.ndarray
    weights: np.ndarray
    service: object
    cache: ForwardCache


def predict(model: GcnnModel, instance: NetworkInstance, tasks, T=1000, K=10) -> Prediction:
    ext = instance.extended
    X0 = build_features(ext, tasks)
    x, cache = forward(model, ext.line_graph, X0)
    delta, svc = estimate_delays(instance.conflict, ext, x, T=T, K=K)
    return Prediction(X0, x, delta, svc, cache)


def predict_weights(model, instance, tasks, T=1000, K=10) -> np.ndarray:
    return predict(model, instance, tasks, T, K).weights


def evaluate_gnn(model, instance, tasks, T=1000, K=10) -> PolicyResult:
    return evaluate_policy(instance, tasks, predict_weights(model, instance, tasks, T, K), T=T, K=K)


def route_gradient(instance: NetworkInstance, tasks, decision, T=1000, K=10):
    """Latency objective and its gradient w.r.t. the upload route matrix.

    Decisions and routes stay fixed; the download matrix follows the upload
    matrix on physical rows. Returns (objective, dO/dGamma, tau, result parts).
    """
    ext = instance.extended
    mats = build_route_matrices(decision, ext)
    lam = task_packet_rates(tasks)
    rho = mats.gamma @ lam
    tau, svc = estimate_delays(instance.conflict, ext, rho, T=T, K=K)
    u = empirical_latency(tau, mats, tasks)
    eta_u = np.array([t.eta_u for t in tasks], dtype=float)
    eta_d = np.array([t.eta_d for t in tasks], dtype=float)
    transfer = (tau @ mats.gamma) * eta_u + (tau @ mats.gamma_minus) * eta_d
    active = transfer >= 2.0 * mats.gamma_minus.sum(axis=0)
    phys = (~ext.is_virtual).astype(float)
    # direct appearance of Gamma in the latency formula
    a_u = np.where(active, eta_u, 0.0)
    a_d = np.where(active, eta_d, 0.0)
    grad = np.outer(tau, a_u) + np.outer(tau * phys, a_d) + np.outer(2.0 * phys, (~active).astype(float))
    # through the traffic rho = Gamma @ lam and the delays tau(rho)
    g_tau = mats.gamma @ a_u + mats.gamma_minus @ a_d
    g_rho = estimate_delays_vjp(instance.conflict, ext, rho, g_tau, T=T, K=K, service=svc)
    grad += np.outer(g_rho, lam)
    return float(u.sum()), grad, tau, (u, mats, rho, svc)


def weight_gradient(route_grad, tau_hat, delta_hat, n_ext_nodes):
    """Surrogate gradient of the objective w.r.t. the predicted weights."""
    return -route_grad.sum(axis=1) + 2.0 * (delta_hat - tau_hat) / n_ext_nodes


def gradient(model: GcnnModel, instance: NetworkInstance, tasks, T=1000, K=10):
    """(objective, flat parameter gradient, PolicyResult) for one task draw."""
    ext = instance.extended
    pred = predict(model, instance, tasks, T, K)
    if not tasks:
        # nothing routed: objective is identically zero
        empty = decide(ext, pred.weights, tasks)
        result = evaluate_decision(instance, tasks, empty, T=T, K=K)
        return 0.0, np.zeros(model.flat().size), result
    decision = decide(ext, pred.weights, tasks)
    obj, dgamma, tau, (u, mats, rho, svc) = route_gradient(instance, tasks, decision, T, K)
    g_delta = weight_gradient(dgamma, tau, pred.weights, ext.node_count)
    g_x = estimate_delays_vjp(instance.conflict, ext, pred.arrivals, g_delta, T=T, K=K, service=pred.service)
    g0, g1, _ = forward_vjp(model, ext.line_graph, pred.cache, g_x)
    flat = np.concatenate([p.ravel() for pair in zip(g0, g1) for p in pair])
    unstable = congestion_flags(svc, rho)
    congested = (mats.gamma[unstable] > 0).any(axis=0) if len(tasks) else np.zeros(0, dtype=bool)
    result = PolicyResult(u, congested, obj, decision, mats, rho, tau, svc)
    return obj, flat, result


def train_step(model: GcnnModel, instance, tasks, lr: float, T=1000, K=10, clip_norm=None):
    """One SGD step; returns (model, objective, applied).

    Non-finite gradients skip the update. With clip_norm, the gradient is
    rescaled to at most that global L2 norm first.
    """
    obj, grad, _ = gradient(model, instance, tasks, T, K)
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite gradient on instance %s; update skipped", instance.index)
        return model, obj, False
    if clip_norm:
        norm = float(np.linalg.norm(grad))
        if norm > clip_norm:
            grad = grad * (clip_norm / norm)
    if lr == 0 or not grad.any():
        return model, obj, True
    return model.with_flat(model.flat() - lr * grad), obj, True


@dataclass
class TrainConfig:
    lr: float = 1e-6
    T: int = 1000
    K: int = 10
    seed: int = 0
    max_steps: int = 20000
    # congested draws give gradients ~1e4x larger than free-flowing ones
    clip_norm: float | None = 3000.0
    eval_every: int = 100
    patience: int = 10
    min_delta: float = 1e-3
    val_fraction: float = 0.1


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (step, train objective, validation objective)
    best_step: int = 0
    stopped_early: bool = False
    skipped: int = 0


def validation_objective(model, pairs, T, K) -> float:
    if not pairs:
        return 0.0
    return float(np.mean([evaluate_gnn(model, inst, tasks, T, K).objective for inst, tasks in pairs]))


def split_validation(instances, cfg: TrainConfig):
    order = stream(cfg.seed, 11).permutation(len(instances))
    n_val = int(round(cfg.val_fraction * len(instances)))
    if len(instances) > 1:
        n_val = max(n_val, 1)
    val = [instances[i] for i in order[:n_val]]
    train = [instances[i] for i in order[n_val:]] or val
    return train, val


def train(model: GcnnModel, instances, cfg: TrainConfig | None = None, progress=None):
    """Sequential SGD over (instance, task draw) pairs with early stopping.

    Returns (best-validation model, TrainLog).
    """
    cfg = cfg or TrainConfig()
    if not instances:
        raise ValueError("empty dataset")
    train_set, val_set = split_validation(instances, cfg)
    pairs = [(inst, d) for inst in train_set for d in inst.task_draws]
    val_pairs = [(inst, d) for inst in val_set for d in inst.task_draws]
    if not pairs:
        raise ValueError("dataset has no task draws")
    rng = stream(cfg.seed, 13)
    logbook = TrainLog()
    best = model.copy()
    best_val = validation_objective(model, val_pairs, cfg.T, cfg.K)
    logbook.rows.append((0, float("nan"), best_val))
    if progress:
        progress(0, float("nan"), best_val)
    bad = 0
    step = 0
    recent = []
    order = []
    while step < cfg.max_steps:
        if not order:
            order = rng.permutation(len(pairs)).tolist()
        inst, tasks = pairs[order.pop()]
        model, obj, ok = train_step(model, inst, tasks, cfg.lr, cfg.T, cfg.K, cfg.clip_norm)
        step += 1
        recent.append(obj)
        if not ok:
            logbook.skipped += 1
            bad += 1
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            val = validation_objective(model, val_pairs, cfg.T, cfg.K)
            tr = float(np.mean(recent))
            recent = []
            logbook.rows.append((step, tr, val))
            if progress:
                progress(step, tr, val)
            if val < best_val * (1.0 - cfg.min_delta):
                best_val, best, logbook.best_step = val, model.copy(), step
                bad = 0
            else:
                bad += 1
        if bad >= cfg.patience:
            logbook.stopped_early = True
            break
    return best, logbook


# ---------------------------------------------------------------- persistence

def to_dict(model: GcnnModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dims": list(model.dims),
        "activations": list(model.activations),
        "aggregation": model.aggregation,
        "seed": model.seed,
        "theta0": [m.tolist() for m in model.theta0],
        "theta1": [m.tolist() for m in model.theta1],
    }


def from_dict(d: dict) -> GcnnModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')}")
    dims = tuple(d["dims"])
    t0 = [np.array(m, dtype=float).reshape(a, b) for m, a, b in zip(d["theta0"], dims[:-1], dims[1:])]
    t1 = [np.array(m, dtype=float).reshape(a, b) for m, a, b in zip(d["theta1"], dims[:-1], dims[1:])]
    for p in t0 + t1:
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite parameter in model file")
    return GcnnModel(dims, t0, t1, tuple(d["activations"]), d.get("aggregation", "self"), int(d.get("seed", 0)))


def save(model: GcnnModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_dict(model), f)
        f.write("\n")


def load(path) -> GcnnModel:
    with open(path, encoding="utf-8") as f:
        return from_dict(json.load(f))
