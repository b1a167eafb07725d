"""Neural network building blocks with explicit forward/backward passes.

All layers operate on numpy arrays (NCHW for feature maps), preserve the
input dtype, and cache whatever the backward pass needs only when called
with ``train=True``.  Convolutions are cross-correlations lowered to a
single GEMM through the kernel backend's im2col.
"""

import numpy as np

from . import kernels

ALLOWED_KERNELS = (1, 3, 7)


def he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    """He-uniform init: U(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: parameter-free, stateless pass-through hooks."""

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        """Persistent non-trainable arrays (e.g. batch-norm running stats)."""
        return {}

    def forward(self, x, train: bool, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv2D(Layer):
    """kxk cross-correlation with bias; padding (k-1)//2.

    Stride 1 preserves the spatial size; stride 2 with an odd kernel yields
    ceil(H/2) x ceil(W/2).
    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, *, rng, dtype=np.float32):
        if kernel not in ALLOWED_KERNELS:
            raise ValueError(f"kernel size must be one of {ALLOWED_KERNELS}")
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = (kernel - 1) // 2
        fan_in = in_channels * kernel * kernel
        self.w = he_uniform((out_channels, in_channels, kernel, kernel), fan_in, rng, dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self._cache = None
        self._gw = None
        self._gb = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self._gw, "b": self._gb}

    def forward(self, x, train: bool, rng=None):
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        cols = kernels.im2col(np.ascontiguousarray(x), self.kernel, self.kernel, self.stride, self.pad)
        w2 = self.w.reshape(self.out_channels, -1)
        oh = kernels.conv_out_size(h, self.kernel, self.stride, self.pad)
        ow = kernels.conv_out_size(w, self.kernel, self.stride, self.pad)
        out = (w2 @ cols).reshape(self.out_channels, b, oh, ow)
        out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
        out += self.b[None, :, None, None]
        if train:
            self._cache = (cols, (b, c, h, w))
        return out

    def backward(self, grad):
        cols, (b, c, h, w) = self._cache
        gmat = grad.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        self._gb = grad.sum(axis=(0, 2, 3))
        self._gw = (gmat @ cols.T).reshape(self.w.shape)
        grad_cols = self.w.reshape(self.out_channels, -1).T @ gmat
        self._cache = None
        return kernels.col2im(
            np.ascontiguousarray(grad_cols), b, c, h, w,
            self.kernel, self.kernel, self.stride, self.pad,
        )


class BatchNorm2D(Layer):
    """Per-channel batch normalization over (batch, height, width).

    Training uses biased batch statistics and updates the running estimates
    as running = momentum * running + (1 - momentum) * batch; inference
    normalizes with the running estimates.
    """

    def __init__(self, channels, momentum=0.99, eps=1e-5, *, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None
        self._ggamma = None
        self._gbeta = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self._ggamma, "beta": self._gbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train: bool, rng=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError("batch norm expects [B, C, H, W] with matching channels")
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch norm requires batch size >= 2 in training mode")
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            invstd = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=x.dtype))
            xhat = (x - mu[None, :, None, None]) * invstd[None, :, None, None]
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mu
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
            self._cache = (xhat, invstd)
        else:
            invstd = 1.0 / np.sqrt(self.running_var + np.asarray(self.eps, dtype=x.dtype))
            xhat = (x - self.running_mean[None, :, None, None]) * invstd[None, :, None, None]
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("batch norm backward requires a training-mode forward")
        xhat, invstd = self._cache
        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        self._gbeta = grad.sum(axis=(0, 2, 3))
        self._ggamma = (grad * xhat).sum(axis=(0, 2, 3))
        coeff = (self.gamma * invstd / m)[None, :, None, None]
        dx = coeff * (
            m * grad
            - self._gbeta[None, :, None, None]
            - xhat * self._ggamma[None, :, None, None]
        )
        self._cache = None
        return dx


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train: bool, rng=None):
        out = np.maximum(x, 0)
        if train:
            self._mask = x > 0
        return out

    def backward(self, grad):
        out = grad * self._mask
        self._mask = None
        return out


class MaxPool2x2(Layer):
    """2x2 stride-2 max pooling; ties pick the first element in row-major
    window order."""

    def __init__(self):
        self._idx = None
        self._shape = None

    def forward(self, x, train: bool, rng=None):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError("max pool requires even spatial dimensions")
        y, idx = kernels.maxpool2x2(np.ascontiguousarray(x))
        if train:
            self._idx = idx
        return y

    def backward(self, grad):
        out = kernels.maxpool2x2_backward(np.ascontiguousarray(grad), self._idx)
        self._idx = None
        return out


class AvgPool(Layer):
    """Non-overlapping kxk average pooling."""

    def __init__(self, k: int):
        self.k = k

    def forward(self, x, train: bool, rng=None):
        b, c, h, w = x.shape
        if h % self.k or w % self.k:
            raise ValueError(f"average pool requires spatial size divisible by {self.k}")
        return x.reshape(b, c, h // self.k, self.k, w // self.k, self.k).mean(axis=(3, 5))

    def backward(self, grad):
        k = self.k
        scaled = grad * np.asarray(1.0 / (k * k), dtype=grad.dtype)
        return scaled.repeat(k, axis=2).repeat(k, axis=3)


class Dropout(Layer):
    """Inverted dropout: active units are scaled by 1/(1-p) during training;
    inference is the identity."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self._mask = None

    def forward(self, x, train: bool, rng=None):
        if not train:
            return x
        if rng is None:
            raise ValueError("dropout requires an rng in training mode")
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype)
        keep *= np.asarray(1.0 / (1.0 - self.p), dtype=x.dtype)
        self._mask = keep
        return x * keep

    def backward(self, grad):
        out = grad * self._mask
        self._mask = None
        return out


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, train: bool, rng=None):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        out = grad.reshape(self._shape)
        self._shape = None
        return out


class Dense(Layer):
    def __init__(self, in_features, out_features, *, rng, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.w = he_uniform((out_features, in_features), in_features, rng, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self._x = None
        self._gw = None
        self._gb = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self._gw, "b": self._gb}

    def forward(self, x, train: bool, rng=None):
        if train:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        self._gw = grad.T @ self._x
        self._gb = grad.sum(axis=0)
        self._x = None
        return grad @ self.w


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def weighted_softmax_xent(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Class-weighted softmax cross entropy.

    loss = (1/B) * sum_i weights[y_i] * (-log p_{i, y_i})
    dlogits_i = weights[y_i] * (p_i - onehot(y_i)) / B

    Returns ``(loss, grad)`` with ``grad`` in the logits dtype.
    """
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(b), labels] - lse
    wy = weights.astype(logits.dtype)[labels]
    loss = float((wy * -logp).sum() / b)
    grad = softmax(logits)
    grad[np.arange(b), labels] -= 1.0
    grad *= (wy / b)[:, None]
    return loss, grad


def compute_class_weights(labels, num_classes: int) -> np.ndarray:
    """Inverse-frequency class weights: w_c = N / (num_classes * n_c).

    Weighting each sample by its class weight makes every class contribute
    equally in aggregate: sum_c w_c * n_c = N.
    """
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes)
    if len(counts) > num_classes:
        raise ValueError("label outside [0, num_classes)")
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"class {missing} has no samples; weights undefined")
    return len(labels) / (num_classes * counts.astype(np.float64))


def reweight_probs(probs, weights) -> np.ndarray:
    """Scale each probability column by a class weight and renormalize rows.

    An alternative to loss weighting: leaves training untouched and instead
    biases the predicted distribution toward rare classes.
    """
    probs = np.asarray(probs)
    weights = np.asarray(weights, dtype=probs.dtype)
    if probs.ndim != 2 or weights.shape != (probs.shape[1],):
        raise ValueError("need probs [N, K] and one weight per class")
    if (weights <= 0).any():
        raise ValueError("class weights must be positive")
    out = probs * weights
    out /= out.sum(axis=1, keepdims=True)
    return out
