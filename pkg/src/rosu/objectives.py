"""Differentiable forget/retain objectives used as the substrate for every update rule.

Three families are provided:

* :class:`QuadraticObjective` -- exact gradients and Hessians, used for the
  bound audits (``M_r = lambda_max(A)`` exactly).
* :class:`MlpObjective` -- mean softmax cross-entropy of a small tanh network,
  with manual backprop.  HVPs are central differences of the gradient.
* :class:`RepresentationObjective` -- half mean-squared distance between a
  hidden layer's activations and those of a frozen reference network, with
  only a subset of coordinates trainable.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DegenerateCouplingError, DimensionError, EmptyBatchError
from .linalg import as_vector, norm


class Objective(Protocol):
    dim: int

    def loss(self, w) -> float: ...

    def grad(self, w) -> np.ndarray: ...

    def hvp(self, w, xi) -> np.ndarray: ...


@dataclass(frozen=True)
class ObjectivePair:
    forget: Objective
    retain: Objective

    @property
    def dim(self) -> int:
        return self.forget.dim


def _check_point(obj, w, name="w") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (obj.dim,):
        raise DimensionError(f"{name} has shape {w.shape}, objective expects ({obj.dim},)")
    return w


def loss(obj: Objective, w) -> float:
    return obj.loss(w)


def grad(obj: Objective, w) -> np.ndarray:
    return obj.grad(w)


def hvp(obj: Objective, w, xi) -> np.ndarray:
    return obj.hvp(w, xi)


def fd_hvp(grad_fn, w, xi, rel_step: float = 1e-4) -> np.ndarray:
    """Central difference of ``grad_fn`` along ``xi``.

    Step ``h = rel_step * (1 + |w|) / max(|xi|, 1e-12)``; approximate.
    """
    w = np.asarray(w, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    xn = norm(xi)
    if xn == 0.0:
        return np.zeros_like(w)
    h = rel_step * (1.0 + norm(w)) / max(xn, 1e-12)
    return (grad_fn(w + h * xi) - grad_fn(w - h * xi)) / (2.0 * h)


def fd_gradient(loss_fn, w, rel_step: float = 1e-5) -> np.ndarray:
    """Coordinate-wise central differences with ``h = rel_step * (1 + |w|)``."""
    w = np.asarray(w, dtype=np.float64)
    h = rel_step * (1.0 + norm(w))
    out = np.empty_like(w)
    for i in range(w.shape[0]):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (loss_fn(w + e) - loss_fn(w - e)) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Quadratics


@dataclass(frozen=True)
class QuadraticObjective:
    """``L(w) = 1/2 (w-c)^T A (w-c) + b^T (w-c) + offset``.

    ``b`` defaults to zero, in which case ``c`` is the minimizer.  A nonzero
    ``b`` with ``A = 0`` gives a linear loss.
    """

    A: np.ndarray
    c: np.ndarray
    offset: float = 0.0
    b: np.ndarray | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        c = as_vector(self.c, "c")
        if A.shape != (c.shape[0], c.shape[0]):
            raise DimensionError(f"A has shape {A.shape}, expected square of size {c.shape[0]}")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0.0):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        b = np.zeros_like(c) if self.b is None else as_vector(self.b, "b")
        if b.shape != c.shape:
            raise DimensionError("b must match c")
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def loss(self, w) -> float:
        d = _check_point(self, w) - self.c
        return float(0.5 * d @ self.A @ d + self.b @ d + self.offset)

    def grad(self, w) -> np.ndarray:
        d = _check_point(self, w) - self.c
        return self.A @ d + self.b

    def hvp(self, w, xi) -> np.ndarray:
        _check_point(self, w)
        xi = _check_point(self, xi, "xi")
        return self.A @ xi

    def hessian(self, w=None) -> np.ndarray:
        return self.A

    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[-1])


def random_spd(dim: int, rng: np.random.Generator, eig_range=(0.2, 2.0)) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = rng.uniform(eig_range[0], eig_range[1], size=dim)
    a = (q * lam) @ q.T
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CoupledPairSpec:
    dim: int
    target_cos: float
    anchor: np.ndarray | None = None
    scale_f: float = 1.0
    scale_r: float = 1.0
    seed: int = 0
    eig_range: tuple[float, float] = (0.2, 2.0)

    def anchor_point(self) -> np.ndarray:
        if self.anchor is None:
            return np.zeros(self.dim)
        return as_vector(self.anchor, "anchor")


def make_coupled_pair(spec: CoupledPairSpec) -> tuple[QuadraticObjective, QuadraticObjective]:
    """Forget/retain quadratics whose gradients at the anchor have cosine ``target_cos``.

    Returns ``(forget, retain)``.
    """
    if not abs(spec.target_cos) < 1.0:
        raise DegenerateCouplingError("target_cos must lie strictly inside (-1, 1)")
    if spec.dim < 2:
        raise DimensionError("a coupled pair needs dim >= 2")
    rng = np.random.default_rng(spec.seed)
    w0 = spec.anchor_point()
    if w0.shape != (spec.dim,):
        raise DimensionError("anchor dimension does not match spec.dim")

    r = rng.standard_normal(spec.dim)
    r /= norm(r)
    s = rng.standard_normal(spec.dim)
    s -= (s @ r) * r
    s -= (s @ r) * r
    s /= norm(s)
    cos = spec.target_cos
    sin = np.sqrt(1.0 - cos * cos)

    a_r = random_spd(spec.dim, rng, spec.eig_range)
    a_f = random_spd(spec.dim, rng, spec.eig_range)
    g_r = spec.scale_r * r
    g_f = spec.scale_f * (cos * r + sin * s)
    c_r = w0 - np.linalg.solve(a_r, g_r)
    c_f = w0 - np.linalg.solve(a_f, g_f)
    retain = QuadraticObjective(a_r, c_r)
    forget = QuadraticObjective(a_f, c_f)
    return forget, retain


# ---------------------------------------------------------------------------
# Small tanh networks


@dataclass(frozen=True)
class Mlp:
    """Fully connected network; tanh on hidden layers, linear output.

    Flat parameter layout per layer: weight matrix ``(out, in)`` row-major,
    then bias ``(out,)``.
    """

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or len(sizes) > 4:
            raise ValueError("between 1 and 3 layers are supported")
        if any(s < 1 or s > 64 for s in sizes):
            raise ValueError("layer widths must lie in [1, 64]")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_slices(self):
        out, start = [], 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append((slice(start, start + i * o), slice(start + i * o, start + i * o + o), (o, i)))
            start += (i + 1) * o
        return out

    def unpack(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise DimensionError(f"expected {self.n_params} parameters, got {params.shape}")
        return [(params[ws].reshape(shape), params[bs]) for ws, bs, shape in self.layer_slices()]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            parts.append(rng.standard_normal(o * i) / np.sqrt(i))
            parts.append(np.zeros(o))
        return np.concatenate(parts)

    def forward(self, params, x, upto: int | None = None) -> list[np.ndarray]:
        """Activations ``[a_0 = x, a_1, ..., a_upto]``; ``upto`` defaults to the output layer."""
        layers = self.unpack(params)
        upto = self.n_layers if upto is None else upto
        acts = [np.asarray(x, dtype=np.float64)]
        for k, (W, b) in enumerate(layers[:upto], start=1):
            z = acts[-1] @ W.T + b
            acts.append(np.tanh(z) if k < self.n_layers else z)
        return acts

    def backward(self, params, acts, upstream: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the flat parameters given ``dL/d a_top`` for ``top = len(acts) - 1``."""
        layers = self.unpack(params)
        grads = np.zeros(self.n_params)
        slices = self.layer_slices()
        g = upstream
        for k in range(len(acts) - 1, 0, -1):
            W, _ = layers[k - 1]
            dz = g if k == self.n_layers else g * (1.0 - acts[k] ** 2)
            ws, bs, _ = slices[k - 1]
            grads[ws] = (dz.T @ acts[k - 1]).ravel()
            grads[bs] = dz.sum(axis=0)
            g = dz @ W
        return grads

    def predict(self, params, x) -> np.ndarray:
        return np.argmax(self.forward(params, x)[-1], axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class MlpObjective:
    """Mean softmax cross-entropy of :class:`Mlp` over a labelled dataset."""

    net: Mlp
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[1] != self.net.layer_sizes[0]:
            raise DimensionError("inputs must have shape (n, input_width)")
        if y.shape != (x.shape[0],):
            raise DimensionError("labels must have one entry per input")
        if x.shape[0] == 0:
            raise EmptyBatchError("dataset is empty")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def dim(self) -> int:
        return self.net.n_params

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def loss(self, w) -> float:
        w = _check_point(self, w)
        logits = self.net.forward(w, self.inputs)[-1]
        return float(-_log_softmax(logits)[np.arange(self.n), self.labels].mean())

    def grad(self, w) -> np.ndarray:
        w = _check_point(self, w)
        acts = self.net.forward(w, self.inputs)
        p = np.exp(_log_softmax(acts[-1]))
        p[np.arange(self.n), self.labels] -= 1.0
        return self.net.backward(w, acts, p / self.n)

    def hvp(self, w, xi) -> np.ndarray:
        w = _check_point(self, w)
        xi = _check_point(self, xi, "xi")
        return fd_hvp(self.grad, w, xi)

    def subset(self, indices) -> "MlpObjective":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise EmptyBatchError("empty batch")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError("batch index out of range")
        return MlpObjective(self.net, self.inputs[idx], self.labels[idx])

    def accuracy(self, w) -> float:
        """Percentage of correctly classified examples."""
        return float(100.0 * np.mean(self.net.predict(w, self.inputs) == self.labels))


def minibatch_grad(obj: MlpObjective, batch_indices, w) -> np.ndarray:
    return obj.subset(batch_indices).grad(w)


@dataclass(frozen=True)
class RepresentationObjective:
    """Half mean-squared distance to frozen reference activations at ``target_layer``.

    Only coordinates in ``trainable_index`` are read from ``w``; the rest are
    pinned to ``reference_params``, so gradients vanish outside that set.
    ``noise`` (if set) is added to the current activations before the
    comparison; draw it with :meth:`with_noise`.
    """

    net: Mlp
    reference_params: np.ndarray
    trainable_index: np.ndarray
    target_layer: int
    probe_inputs: np.ndarray
    noise_std: float = 0.0
    noise: np.ndarray | None = None
    _reference_acts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w0 = as_vector(self.reference_params, "reference_params")
        if w0.shape != (self.net.n_params,):
            raise DimensionError("reference_params does not match the network")
        idx = np.unique(np.asarray(self.trainable_index, dtype=np.int64))
        if idx.size == 0 or idx[0] < 0 or idx[-1] >= w0.shape[0]:
            raise ValueError("trainable_index must be a nonempty set of valid parameter indices")
        if not 1 <= self.target_layer <= self.net.n_layers:
            raise ValueError(f"target_layer must lie in [1, {self.net.n_layers}]")
        x = np.array(self.probe_inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyBatchError("probe_inputs must be a nonempty (n, input_width) array")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        idx.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "reference_params", w0)
        object.__setattr__(self, "trainable_index", idx)
        object.__setattr__(self, "probe_inputs", x)
        if self.noise is not None:
            noise = as_vector(self.noise, "noise")
            if noise.shape != (self.width,):
                raise DimensionError("noise must match the target layer width")
            object.__setattr__(self, "noise", noise)
        ref = self.net.forward(w0, x, upto=self.target_layer)[-1]
        ref.setflags(write=False)
        object.__setattr__(self, "_reference_acts", ref)

    @property
    def dim(self) -> int:
        return self.net.n_params

    @property
    def width(self) -> int:
        return self.net.layer_sizes[self.target_layer]

    @property
    def n_trainable(self) -> int:
        return self.trainable_index.shape[0]

    def with_noise(self, rng: np.random.Generator) -> "RepresentationObjective":
        """Copy with a fresh batch-shared draw from ``N(0, noise_std^2 I)``."""
        noise = rng.standard_normal(self.width) * self.noise_std
        return dataclasses.replace(self, noise=noise)

    def embed(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_trainable,):
            raise DimensionError(f"theta must have length {self.n_trainable}")
        w = np.array(self.reference_params)
        w[self.trainable_index] = theta
        return w

    def restrict(self, w) -> np.ndarray:
        return np.asarray(w, dtype=np.float64)[self.trainable_index].copy()

    def _effective(self, w) -> np.ndarray:
        w = _check_point(self, w)
        eff = np.array(self.reference_params)
        eff[self.trainable_index] = w[self.trainable_index]
        return eff

    def _residual(self, acts) -> np.ndarray:
        r = acts[-1] - self._reference_acts
        if self.noise is not None:
            r = r + self.noise
        return r

    def loss(self, w) -> float:
        eff = self._effective(w)
        acts = self.net.forward(eff, self.probe_inputs, upto=self.target_layer)
        r = self._residual(acts)
        return float(0.5 * np.sum(r * r) / r.shape[0])

    def grad(self, w) -> np.ndarray:
        eff = self._effective(w)
        acts = self.net.forward(eff, self.probe_inputs, upto=self.target_layer)
        r = self._residual(acts)
        full = self.net.backward(eff, acts, r / r.shape[0])
        out = np.zeros_like(full)
        out[self.trainable_index] = full[self.trainable_index]
        return out

    def hvp(self, w, xi) -> np.ndarray:
        w = _check_point(self, w)
        xi = _check_point(self, xi, "xi")
        return fd_hvp(self.grad, w, xi)

    def theta_view(self) -> "ThetaObjective":
        return ThetaObjective(self)


@dataclass(frozen=True)
class ThetaObjective:
    """A :class:`RepresentationObjective` re-expressed over the trainable coordinates only."""

    base: RepresentationObjective

    @property
    def dim(self) -> int:
        return self.base.n_trainable

    def loss(self, theta) -> float:
        return self.base.loss(self.base.embed(theta))

    def grad(self, theta) -> np.ndarray:
        return self.base.grad(self.base.embed(theta))[self.base.trainable_index]

    def hvp(self, theta, xi) -> np.ndarray:
        theta = _check_point(self, theta)
        xi = _check_point(self, xi, "xi")
        return fd_hvp(self.grad, theta, xi)


# ---------------------------------------------------------------------------
# Toy data


@dataclass(frozen=True)
class BlobsDataset:
    inputs: np.ndarray
    labels: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x1", "x2", "label"])
            for (x1, x2), y in zip(self.inputs, self.labels):
                writer.writerow([repr(float(x1)), repr(float(x2)), int(y)])


def make_blobs(seed: int, n_per_class: int = 200, n_classes: int = 4, radius: float = 2.0,
               std: float = 1.0) -> BlobsDataset:
    """Isotropic 2-D Gaussian blobs with centers evenly spaced on a circle."""
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    xs, ys = [], []
    for k in range(n_classes):
        xs.append(centers[k] + std * rng.standard_normal((n_per_class, 2)))
        ys.append(np.full(n_per_class, k))
    return BlobsDataset(np.concatenate(xs), np.concatenate(ys))


def split_indices(n: int, batch_sizes: Sequence[int], rng: np.random.Generator):
    """Disjoint random index batches (helper for mini-batch tests)."""
    perm = rng.permutation(n)
    out, start = [], 0
    for b in batch_sizes:
        out.append(perm[start:start + b])
        start += b
    return out
