"""Differentiable toy tasks with closed-form gradients.

Four kinds stand in for pretraining/fine-tuning workloads:

* ``quadratic``           -- 0.5 (theta - c)^T A (theta - c), no dataset
* ``linear-regression``   -- squared error, unit-variance Gaussian likelihood
* ``logistic-regression`` -- binary cross entropy
* ``mlp-1h``              -- affine -> tanh -> affine -> softmax cross entropy

Every generator draws exclusively from labelled child streams of the
RandomSource it is given, and the resulting task records its generation
parameters, so ``task_from_spec(task.to_spec())`` rebuilds it bit for bit.
Transfer pairs interpolate generative parameters (centers, true weights)
with a relatedness knob rho; the dataset noise stream is shared between
source and target so rho = 1 yields an identical task.
"""

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import DimensionError, InvalidBatchError, UnsupportedTaskError
from .numkit import RandomSource, check_same_length

TASK_KINDS = ("quadratic", "linear-regression", "logistic-regression", "mlp-1h")


def _as_batch(n_rows: int, batch) -> np.ndarray:
    if batch is None:
        return np.arange(n_rows)
    idx = np.asarray(batch, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise InvalidBatchError("empty batch")
    if idx.min() < 0 or idx.max() >= n_rows:
        raise InvalidBatchError(f"batch indices outside [0, {n_rows})")
    return idx


def batch_stream(n_rows: int, batch_size: int, rng: RandomSource) -> Iterator[np.ndarray]:
    """Yield without-replacement batches, one fresh shuffle per epoch."""
    if batch_size < 1:
        raise InvalidBatchError("batch_size must be >= 1")

    def generate(size):
        while True:
            order = rng.permutation(n_rows)
            for start in range(0, n_rows, size):
                yield order[start:start + size]

    return generate(min(batch_size, n_rows))


class Task:
    """Common surface shared by all task kinds."""

    kind: str
    dim: int

    def loss_and_grad(self, theta: np.ndarray, batch=None):
        raise NotImplementedError

    def dataset_size(self) -> int:
        return 0

    def per_sample_loglik_grads(self, theta: np.ndarray, indices: np.ndarray) -> np.ndarray:
        raise UnsupportedTaskError(f"{self.kind} has no per-sample log-likelihood")

    def to_spec(self) -> dict:
        if self.spec is None:
            raise ValueError("task was built directly from arrays and has no generation spec")
        return dict(self.spec)


@dataclass
class QuadraticTask(Task):
    """loss(theta) = 0.5 (theta - center)^T curvature (theta - center)."""

    curvature: np.ndarray
    center: np.ndarray
    spec: Optional[dict] = None
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        self.dim = self.center.size
        if self.curvature.shape != (self.dim, self.dim):
            raise DimensionError("curvature must be dim x dim")
        if not np.allclose(self.curvature, self.curvature.T, atol=1e-12):
            raise ValueError("curvature must be symmetric")
        if np.any(np.diag(self.curvature) <= 0):
            raise ValueError("curvature diagonal must be positive")

    def loss_and_grad(self, theta, batch=None):
        check_same_length(theta, self.center)
        diff = theta - self.center
        grad = self.curvature @ diff
        loss = 0.5 * float(diff @ grad)
        return loss, grad


@dataclass
class LinearRegressionTask(Task):
    """Mean of 0.5 (x . theta - y)^2; Gaussian unit-variance likelihood."""

    features: np.ndarray
    targets: np.ndarray
    spec: Optional[dict] = None
    kind: str = field(default="linear-regression", init=False)

    def __post_init__(self):
        self.dim = self.features.shape[1]
        if self.targets.shape != (self.features.shape[0],):
            raise DimensionError("targets must have one row per feature row")

    def dataset_size(self):
        return self.features.shape[0]

    def loss_and_grad(self, theta, batch=None):
        if theta.size != self.dim:
            raise DimensionError(f"theta length {theta.size} != task dim {self.dim}")
        idx = _as_batch(self.dataset_size(), batch)
        X, y = self.features[idx], self.targets[idx]
        resid = X @ theta - y
        loss = 0.5 * float(np.mean(resid**2))
        grad = X.T @ resid / idx.size
        return loss, grad

    def per_sample_loglik_grads(self, theta, indices):
        X, y = self.features[indices], self.targets[indices]
        return X * (y - X @ theta)[:, None]


@dataclass
class LogisticRegressionTask(Task):
    """Mean binary cross entropy with labels in {0, 1}."""

    features: np.ndarray
    labels: np.ndarray
    spec: Optional[dict] = None
    kind: str = field(default="logistic-regression", init=False)

    def __post_init__(self):
        self.dim = self.features.shape[1]
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError("labels must have one row per feature row")

    def dataset_size(self):
        return self.features.shape[0]

    def loss_and_grad(self, theta, batch=None):
        if theta.size != self.dim:
            raise DimensionError(f"theta length {theta.size} != task dim {self.dim}")
        idx = _as_batch(self.dataset_size(), batch)
        X, y = self.features[idx], self.labels[idx]
        z = X @ theta
        # log(1 + exp(z)) - y z, computed without overflow
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = _sigmoid(z)
        grad = X.T @ (p - y) / idx.size
        return loss, grad

    def per_sample_loglik_grads(self, theta, indices):
        X, y = self.features[indices], self.labels[indices]
        p = _sigmoid(X @ theta)
        return X * (y - p)[:, None]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class MlpTask(Task):
    """One-hidden-layer tanh network with softmax cross entropy.

    Parameters pack as [W1 (hidden x dim_in), b1, W2 (classes x hidden), b2],
    d = hidden * (dim_in + 1) + classes * (hidden + 1).
    """

    dim_in: int
    hidden: int
    classes: int
    features: np.ndarray
    labels: np.ndarray
    spec: Optional[dict] = None
    kind: str = field(default="mlp-1h", init=False)

    def __post_init__(self):
        self.dim = self.hidden * (self.dim_in + 1) + self.classes * (self.hidden + 1)
        if self.features.shape[1] != self.dim_in:
            raise DimensionError("feature width must equal dim_in")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError("labels must have one row per feature row")

    def dataset_size(self):
        return self.features.shape[0]

    def unpack(self, theta: np.ndarray):
        h, din, C = self.hidden, self.dim_in, self.classes
        i = 0
        W1 = theta[i:i + h * din].reshape(h, din); i += h * din
        b1 = theta[i:i + h]; i += h
        W2 = theta[i:i + C * h].reshape(C, h); i += C * h
        b2 = theta[i:i + C]
        return W1, b1, W2, b2

    def _forward(self, theta, X):
        W1, b1, W2, b2 = self.unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        logits = H @ W2.T + b2
        mx = logits.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
        P = np.exp(logits - lse[:, None])
        return H, logits, lse, P

    def loss_and_grad(self, theta, batch=None):
        if theta.size != self.dim:
            raise DimensionError(f"theta length {theta.size} != task dim {self.dim}")
        idx = _as_batch(self.dataset_size(), batch)
        X, y = self.features[idx], self.labels[idx]
        H, logits, lse, P = self._forward(theta, X)
        n = idx.size
        loss = float(np.mean(lse - logits[np.arange(n), y]))
        dlogits = P.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        W1, b1, W2, b2 = self.unpack(theta)
        dW2 = dlogits.T @ H
        db2 = dlogits.sum(axis=0)
        dH = dlogits @ W2
        dZ1 = dH * (1.0 - H * H)
        dW1 = dZ1.T @ X
        db1 = dZ1.sum(axis=0)
        return loss, np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def per_sample_loglik_grads(self, theta, indices):
        X, y = self.features[indices], self.labels[indices]
        H, logits, lse, P = self._forward(theta, X)
        n = indices.size
        dlogits = P.copy()
        dlogits[np.arange(n), y] -= 1.0   # per-sample dCE/dlogits, no 1/n
        W1, b1, W2, b2 = self.unpack(theta)
        dW2 = np.einsum("bc,bh->bch", dlogits, H)
        db2 = dlogits
        dH = dlogits @ W2
        dZ1 = dH * (1.0 - H * H)
        dW1 = np.einsum("bh,bd->bhd", dZ1, X)
        db1 = dZ1
        grads = np.concatenate(
            [dW1.reshape(n, -1), db1, dW2.reshape(n, -1), db2], axis=1)
        return -grads  # log-likelihood gradient = -dCE/dtheta


def finite_diff_grad(task: Task, theta: np.ndarray, batch=None, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"finite-difference step must be > 0, got {h}")
    base = np.array(theta, dtype=np.float64)
    grad = np.empty_like(base)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + h
        lp, _ = task.loss_and_grad(base, batch)
        base[i] = saved - h
        lm, _ = task.loss_and_grad(base, batch)
        base[i] = saved
        grad[i] = (lp - lm) / (2 * h)
    return grad


# --- generators ------------------------------------------------------------
# All draws go through labelled child streams so a recorded seed replays
# the task exactly regardless of how the parent source was used elsewhere.

def _draw_quadratic_params(dim: int, rng: RandomSource):
    M = rng.child("rotation").normal((dim, dim))
    Q, R = np.linalg.qr(M)
    Q = Q * np.sign(np.diag(R))
    lam = 10.0 ** rng.child("eigs").uniform(-1.0, 1.0, dim)
    A = (Q * lam) @ Q.T
    A = (A + A.T) / 2
    c = rng.child("center").normal(dim)
    return {"curvature": A, "center": c}


def _draw_linreg_params(dim: int, rng: RandomSource):
    return {"weights": rng.child("weights").normal(dim)}


def _draw_logreg_params(dim: int, rng: RandomSource):
    return {"weights": 2.0 * rng.child("weights").normal(dim)}


def _draw_mlp_params(dim_in: int, classes: int, center_scale: float, rng: RandomSource):
    return {"centers": center_scale * rng.child("centers").normal((classes, dim_in))}


def _sample_linreg_data(params, dim, n_samples, noise_std, rng: RandomSource):
    data = rng.child("data")
    X = data.normal((n_samples, dim))
    y = X @ params["weights"] + noise_std * data.normal(n_samples)
    return X, y


def _sample_logreg_data(params, dim, n_samples, rng: RandomSource):
    data = rng.child("data")
    X = data.normal((n_samples, dim))
    p = _sigmoid(X @ params["weights"])
    y = (data.uniform(size=n_samples) < p).astype(np.float64)
    return X, y


def _sample_mlp_data(params, dim_in, classes, n_samples, noise_std, label_noise,
                     rng: RandomSource):
    data = rng.child("data")
    y = data.integers(0, classes, n_samples)
    X = params["centers"][y] + noise_std * data.normal((n_samples, dim_in))
    if label_noise > 0:
        flip = data.uniform(size=n_samples) < label_noise
        resampled = data.integers(0, classes, n_samples)
        y = np.where(flip, resampled, y)
    return X, y.astype(np.intp)


def gen_quadratic_task(dim: int, rng: RandomSource) -> QuadraticTask:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    params = _draw_quadratic_params(dim, rng)
    spec = {"kind": "quadratic", "dim": dim, "seed": rng.seed}
    return QuadraticTask(params["curvature"], params["center"], spec=spec)


def gen_linear_regression_task(dim: int, n_samples: int, rng: RandomSource,
                               noise_std: float = 0.1) -> LinearRegressionTask:
    params = _draw_linreg_params(dim, rng)
    X, y = _sample_linreg_data(params, dim, n_samples, noise_std, rng)
    spec = {"kind": "linear-regression", "dim": dim, "seed": rng.seed,
            "n_samples": n_samples, "noise_std": noise_std}
    return LinearRegressionTask(X, y, spec=spec)


def gen_logistic_regression_task(dim: int, n_samples: int, rng: RandomSource
                                 ) -> LogisticRegressionTask:
    params = _draw_logreg_params(dim, rng)
    X, y = _sample_logreg_data(params, dim, n_samples, rng)
    spec = {"kind": "logistic-regression", "dim": dim, "seed": rng.seed,
            "n_samples": n_samples}
    return LogisticRegressionTask(X, y, spec=spec)


def make_mlp_task(dim_in: int, hidden: int, classes: int, n_samples: int,
                  rng: RandomSource, center_scale: float = 1.0,
                  noise_std: float = 1.0, label_noise: float = 0.0) -> MlpTask:
    if min(dim_in, hidden, classes, n_samples) < 1:
        raise ValueError("all sizes must be >= 1")
    params = _draw_mlp_params(dim_in, classes, center_scale, rng)
    X, y = _sample_mlp_data(params, dim_in, classes, n_samples, noise_std,
                            label_noise, rng)
    spec = {"kind": "mlp-1h", "dim_in": dim_in, "hidden": hidden,
            "classes": classes, "seed": rng.seed, "n_samples": n_samples,
            "center_scale": center_scale, "noise_std": noise_std,
            "label_noise": label_noise}
    return MlpTask(dim_in, hidden, classes, X, y, spec=spec)


@dataclass
class TransferPair:
    source: Task
    target: Task
    rho: float
    spec: dict

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise DimensionError("source and target dimensions must match")

    def to_spec(self) -> dict:
        return dict(self.spec)


def _mix(rho: float, src: dict, ind: dict) -> dict:
    return {k: rho * src[k] + (1 - rho) * ind[k] for k in src}


def gen_transfer_pair(kind: str, dim: int, rho: float, rng: RandomSource,
                      n_samples: int = 512, mlp_dims: tuple | None = None,
                      noise_std: float | None = None, center_scale: float = 1.0,
                      label_noise: float = 0.0) -> TransferPair:
    """Source/target pair whose generative parameters are the convex mix
    rho * source + (1 - rho) * independent draw.

    The dataset noise stream is shared between source and target, so
    rho = 1 reproduces the source task exactly while rho = 0 gives a
    target drawn independently of the source parameters.
    """
    if kind not in TASK_KINDS:
        raise UnsupportedTaskError(f"unknown task kind: {kind!r}")
    if not (0.0 <= rho <= 1.0):
        raise ValueError(f"relatedness rho must lie in [0, 1], got {rho}")
    src_rng = rng.child("source-params")
    ind_rng = rng.child("independent-params")

    spec = {"kind": kind, "dim": dim, "rho": rho, "seed": rng.seed,
            "n_samples": n_samples, "center_scale": center_scale,
            "label_noise": label_noise}

    if kind == "quadratic":
        p_src = _draw_quadratic_params(dim, src_rng)
        p_tgt = _mix(rho, p_src, _draw_quadratic_params(dim, ind_rng))
        source = QuadraticTask(p_src["curvature"], p_src["center"],
                               spec={**spec, "role": "source"})
        target = QuadraticTask(p_tgt["curvature"], p_tgt["center"],
                               spec={**spec, "role": "target"})
    elif kind == "linear-regression":
        ns = 0.1 if noise_std is None else noise_std
        spec["noise_std"] = ns
        p_src = _draw_linreg_params(dim, src_rng)
        p_tgt = _mix(rho, p_src, _draw_linreg_params(dim, ind_rng))
        Xs, ys = _sample_linreg_data(p_src, dim, n_samples, ns, rng)
        Xt, yt = _sample_linreg_data(p_tgt, dim, n_samples, ns, rng)
        source = LinearRegressionTask(Xs, ys, spec={**spec, "role": "source"})
        target = LinearRegressionTask(Xt, yt, spec={**spec, "role": "target"})
    elif kind == "logistic-regression":
        p_src = _draw_logreg_params(dim, src_rng)
        p_tgt = _mix(rho, p_src, _draw_logreg_params(dim, ind_rng))
        Xs, ys = _sample_logreg_data(p_src, dim, n_samples, rng)
        Xt, yt = _sample_logreg_data(p_tgt, dim, n_samples, rng)
        source = LogisticRegressionTask(Xs, ys, spec={**spec, "role": "source"})
        target = LogisticRegressionTask(Xt, yt, spec={**spec, "role": "target"})
    else:  # mlp-1h
        if mlp_dims is None:
            raise ValueError("mlp-1h transfer pairs need mlp_dims=(dim_in, hidden, classes)")
        dim_in, hidden, classes = mlp_dims
        ns = 1.0 if noise_std is None else noise_std
        spec.update({"dim_in": dim_in, "hidden": hidden, "classes": classes,
                     "noise_std": ns})
        d = hidden * (dim_in + 1) + classes * (hidden + 1)
        if dim not in (0, d):
            raise DimensionError(f"mlp parameter count is {d}, got dim={dim}")
        spec["dim"] = d
        p_src = _draw_mlp_params(dim_in, classes, center_scale, src_rng)
        p_tgt = _mix(rho, p_src, _draw_mlp_params(dim_in, classes, center_scale, ind_rng))
        Xs, ys = _sample_mlp_data(p_src, dim_in, classes, n_samples, ns, label_noise, rng)
        Xt, yt = _sample_mlp_data(p_tgt, dim_in, classes, n_samples, ns, label_noise, rng)
        source = MlpTask(dim_in, hidden, classes, Xs, ys, spec={**spec, "role": "source"})
        target = MlpTask(dim_in, hidden, classes, Xt, yt, spec={**spec, "role": "target"})

    return TransferPair(source, target, rho, spec)


# --- JSON (de)serialization -------------------------------------------------

def task_to_json(task: Task) -> str:
    return json.dumps(task.to_spec(), sort_keys=True)


def transfer_pair_from_spec(spec: dict) -> TransferPair:
    spec = dict(spec)
    spec.pop("role", None)
    kind = spec["kind"]
    rng = RandomSource(spec["seed"])
    kwargs = dict(n_samples=spec.get("n_samples", 512),
                  center_scale=spec.get("center_scale", 1.0),
                  label_noise=spec.get("label_noise", 0.0),
                  noise_std=spec.get("noise_std"))
    if kind == "mlp-1h":
        kwargs["mlp_dims"] = (spec["dim_in"], spec["hidden"], spec["classes"])
    return gen_transfer_pair(kind, spec["dim"], spec["rho"], rng, **kwargs)


def task_from_spec(spec: dict) -> Task:
    spec = dict(spec)
    if "role" in spec:
        pair = transfer_pair_from_spec(spec)
        return pair.source if spec["role"] == "source" else pair.target
    kind = spec["kind"]
    rng = RandomSource(spec["seed"])
    if kind == "quadratic":
        return gen_quadratic_task(spec["dim"], rng)
    if kind == "linear-regression":
        return gen_linear_regression_task(spec["dim"], spec["n_samples"], rng,
                                          noise_std=spec.get("noise_std", 0.1))
    if kind == "logistic-regression":
        return gen_logistic_regression_task(spec["dim"], spec["n_samples"], rng)
    if kind == "mlp-1h":
        return make_mlp_task(spec["dim_in"], spec["hidden"], spec["classes"],
                             spec["n_samples"], rng,
                             center_scale=spec.get("center_scale", 1.0),
                             noise_std=spec.get("noise_std", 1.0),
                             label_noise=spec.get("label_noise", 0.0))
    raise UnsupportedTaskError(f"unknown task kind in spec: {kind!r}")


def task_from_json(text: str) -> Task:
    return task_from_spec(json.loads(text))
