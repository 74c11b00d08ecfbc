"""Numpy layers with hand-written backward passes.

Activations use channel-last layout: volumes are ``(N, X, Y, Z, C)``,
feature vectors ``(N, F)``. Each layer keeps what its backward pass needs
from the most recent forward call.
"""

import numpy as np


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv3D(Layer):
    """3-D convolution, stride 1, zero padding that preserves the spatial size."""

    def __init__(self, cin, cout, rng, kernel=3, dtype=np.float32):
        super().__init__()
        self.k = kernel
        fan_in = cin * kernel**3
        self.params["W"] = (rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, kernel, kernel, kernel))).astype(dtype)
        self.params["b"] = np.zeros(cout, dtype)
        self.need_input_grad = True
        self._buffers = {}
        self.zero_grad()

    def _buffer(self, name, shape, dtype):
        # scratch arrays are reused across calls; fresh large allocations are page-fault bound
        key = (name, shape, np.dtype(dtype).str)
        buf = self._buffers.get(key)
        if buf is None:
            if len(self._buffers) >= 8:
                self._buffers.clear()
            buf = self._buffers[key] = np.empty(shape, dtype)
        return buf

    def forward(self, x):
        k, p = self.k, self.k // 2
        n, X, Y, Z, c = x.shape
        if k == 1:
            cols = x.reshape(-1, c).T
        else:
            # im2col in channel-first order so each copied run is a contiguous z-row
            xp = np.pad(x.transpose(4, 0, 1, 2, 3), ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
            cols = self._buffer("cols", (c, k, k, k, n, X, Y, Z), x.dtype)
            for a in range(k):
                for b in range(k):
                    for e in range(k):
                        cols[:, a, b, e] = xp[:, :, a : a + X, b : b + Y, e : e + Z]
            cols = cols.reshape(c * k**3, -1)
        self.cache = (cols, x.shape)
        W = self.params["W"].reshape(self.params["W"].shape[0], -1)
        out = (W @ cols).T + self.params["b"]
        return out.reshape(n, X, Y, Z, -1)

    def backward(self, dout):
        cols, shape = self.cache
        n, X, Y, Z, c = shape
        k, p = self.k, self.k // 2
        cout = dout.shape[-1]
        d2 = dout.reshape(-1, cout)
        W = self.params["W"]
        self.grads["W"] += (cols @ d2).T.reshape(W.shape)
        self.grads["b"] += d2.sum(axis=0)
        if not self.need_input_grad:
            return None
        dcols = W.reshape(cout, -1).T @ d2.T  # (c*k^3, M)
        if k == 1:
            return dcols.T.reshape(shape)
        dcols = dcols.reshape(c, k, k, k, n, X, Y, Z)
        dxp = self._buffer("dxp", (c, n, X + 2 * p, Y + 2 * p, Z + 2 * p), dcols.dtype)
        dxp.fill(0)
        for a in range(k):
            for b in range(k):
                for e in range(k):
                    dxp[:, :, a : a + X, b : b + Y, e : e + Z] += dcols[:, a, b, e]
        return dxp[:, :, p : p + X, p : p + Y, p : p + Z].transpose(1, 2, 3, 4, 0).copy()


class ReLU(Layer):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dout):
        return dout * self.mask


class MaxPool3D(Layer):
    """Non-overlapping max pooling; ragged borders are padded with -inf (ceil mode)."""

    def __init__(self, factor):
        super().__init__()
        self.f = factor

    def forward(self, x):
        f = self.f
        if f == 1:
            self.cache = None
            return x
        n, X, Y, Z, c = x.shape
        pads = [(0, 0)] + [(0, (-s) % f) for s in (X, Y, Z)] + [(0, 0)]
        xp = np.pad(x, pads, constant_values=-np.inf)
        Xp, Yp, Zp = xp.shape[1:4]
        w = xp.reshape(n, Xp // f, f, Yp // f, f, Zp // f, f, c)
        w = w.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(n, Xp // f, Yp // f, Zp // f, c, f**3)
        idx = w.argmax(axis=-1)
        self.cache = (idx, x.shape, xp.shape)
        return np.take_along_axis(w, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        if self.cache is None:
            return dout
        f = self.f
        idx, shape, pshape = self.cache
        n, X, Y, Z, c = shape
        Xp, Yp, Zp = pshape[1:4]
        dw = np.zeros(dout.shape + (f**3,), dout.dtype)
        np.put_along_axis(dw, idx[..., None], dout[..., None], axis=-1)
        dw = dw.reshape(n, Xp // f, Yp // f, Zp // f, c, f, f, f).transpose(0, 1, 5, 2, 6, 3, 7, 4)
        return dw.reshape(pshape)[:, :X, :Y, :Z]


class GlobalMaxPool(Layer):
    def forward(self, x):
        n, c = x.shape[0], x.shape[-1]
        flat = x.reshape(n, -1, c)
        idx = flat.argmax(axis=1)
        self.cache = (idx, x.shape)
        return np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0]

    def backward(self, dout):
        idx, shape = self.cache
        n, c = shape[0], shape[-1]
        d = np.zeros((n, int(np.prod(shape[1:-1])), c), dout.dtype)
        np.put_along_axis(d, idx[:, None, :], dout[:, None, :], axis=1)
        return d.reshape(shape)


class Linear(Layer):
    def __init__(self, fin, fout, rng, dtype=np.float32):
        super().__init__()
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fin), (fout, fin)).astype(dtype)
        self.params["b"] = np.zeros(fout, dtype)
        self.zero_grad()

    def forward(self, x):
        self.x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += dout.T @ self.x
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"]


class BatchNorm1d(Layer):
    """Per-feature batch normalisation with running statistics for inference."""

    def __init__(self, n, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(n, dtype)
        self.params["beta"] = np.zeros(n, dtype)
        self.running_mean = np.zeros(n, dtype)
        self.running_var = np.ones(n, dtype)
        self.momentum, self.eps = momentum, eps
        self.training = True
        self.zero_grad()

    def forward(self, x):
        g, b = self.params["gamma"], self.params["beta"]
        if not self.training:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            self.cache = ("eval", xhat)
            return g * xhat + b
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self.cache = (xhat, inv)
        n = x.shape[0]
        m = self.momentum
        unbiased = var * n / (n - 1) if n > 1 else var
        self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
        self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        return g * xhat + b

    def backward(self, dout):
        g = self.params["gamma"]
        if isinstance(self.cache[0], str):
            self.grads["gamma"] += (dout * self.cache[1]).sum(axis=0)
            self.grads["beta"] += dout.sum(axis=0)
            return dout * g / np.sqrt(self.running_var + self.eps)
        xhat, inv = self.cache
        self.grads["gamma"] += (dout * xhat).sum(axis=0)
        self.grads["beta"] += dout.sum(axis=0)
        dxhat = dout * g
        return inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
