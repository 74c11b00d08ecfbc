"""Encoders, the three input-feeding topologies and the BCE objective."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .layers import BatchNorm1d, Conv3D, GlobalMaxPool, Linear, MaxPool3D, ReLU

HEADS = ("global", "ica", "mca")
KINDS = ("whole_head", "h_stack", "im_stack")


@dataclass(frozen=True)
class EncoderConfig:
    # (output channels, max-pool factor after the block)
    conv_blocks: tuple = ((8, 2), (16, 2), (32, 2))
    feature_len: int = 64
    input_channels: int = 1
    weight_init_seed: int = 0

    def __post_init__(self):
        if self.feature_len < 1:
            raise ValueError("feature_len must be >= 1")
        object.__setattr__(self, "conv_blocks", tuple(tuple(int(v) for v in b) for b in self.conv_blocks))


class Encoder:
    """conv3x3x3-ReLU-maxpool blocks, a pointwise projection to ``feature_len``, global max pool."""

    def __init__(self, config, rng, dtype=np.float32):
        self.config = config
        self.layers = []
        cin = config.input_channels
        for cout, factor in config.conv_blocks:
            self.layers += [Conv3D(cin, cout, rng, dtype=dtype), ReLU(), MaxPool3D(factor)]
            cin = cout
        self.layers += [Conv3D(cin, config.feature_len, rng, kernel=1, dtype=dtype), ReLU(), GlobalMaxPool()]
        # the first convolution never needs a gradient w.r.t. the input volume
        self.layers[0].need_input_grad = False

    def check_input(self, x):
        if x.ndim != 5 or x.shape[-1] != self.config.input_channels:
            raise ValueError(f"encoder expects (N, X, Y, Z, {self.config.input_channels}), got {x.shape}")
        if min(x.shape[1:4]) < 1:
            raise ValueError("empty spatial input")

    def forward(self, x):
        self.check_input(x)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, d):
        for layer in reversed(self.layers):
            d = layer.backward(d)
            if d is None:
                break


class Head:
    """Dense layer followed by batch norm, producing 3 logits."""

    def __init__(self, fin, rng, dtype=np.float32):
        self.linear = Linear(fin, 3, rng, dtype=dtype)
        self.norm = BatchNorm1d(3, dtype=dtype)
        self.layers = [self.linear, self.norm]

    def forward(self, x):
        return self.norm.forward(self.linear.forward(x))

    def backward(self, d):
        return self.linear.backward(self.norm.backward(d))


class Network:
    """Whole-head, H-Stack or IM-Stack classifier emitting 9 logits.

    Logits are grouped (global, ica, mca), each ordered (no LVO, left, right).
    whole_head and h_stack take one volume; im_stack takes (ICA, MCA) stacks
    and feeds the concatenation of both encodings to the global head.
    """

    def __init__(self, kind, encoder=EncoderConfig(), dtype=np.float32):
        if kind not in KINDS:
            raise ValueError(f"unknown network kind {kind!r}")
        self.kind = kind
        self.dtype = dtype
        channels = 1 if kind == "whole_head" else 2
        encoder = EncoderConfig(encoder.conv_blocks, encoder.feature_len, channels, encoder.weight_init_seed)
        self.encoder_config = encoder
        rng = np.random.default_rng(encoder.weight_init_seed)
        n_enc = 2 if kind == "im_stack" else 1
        self.encoders = [Encoder(encoder, rng, dtype) for _ in range(n_enc)]
        F = encoder.feature_len
        self.heads = {
            "global": Head(F * n_enc, rng, dtype),
            "ica": Head(F, rng, dtype),
            "mca": Head(F, rng, dtype),
        }
        self.training = True

    # -- parameters --

    def named_layers(self):
        for e, enc in enumerate(self.encoders):
            for k, layer in enumerate(enc.layers):
                yield f"enc{e}.{k}", layer
        for name in HEADS:
            for k, layer in enumerate(self.heads[name].layers):
                yield f"{name}.{k}", layer

    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self.named_layers() for pn, p in layer.params.items()}

    def gradients(self):
        return {f"{ln}.{pn}": layer.grads[pn] for ln, layer in self.named_layers() for pn in layer.params}

    def buffers(self):
        out = {}
        for ln, layer in self.named_layers():
            if isinstance(layer, BatchNorm1d):
                out[f"{ln}.running_mean"] = layer.running_mean
                out[f"{ln}.running_var"] = layer.running_var
        return out

    def load_state(self, state):
        for ln, layer in self.named_layers():
            for pn in layer.params:
                layer.params[pn][...] = state[f"{ln}.{pn}"]
            if isinstance(layer, BatchNorm1d):
                layer.running_mean = np.array(state[f"{ln}.running_mean"], layer.running_mean.dtype)
                layer.running_var = np.array(state[f"{ln}.running_var"], layer.running_var.dtype)

    def state(self):
        """Copy of all parameters and normalisation statistics."""
        out = {k: v.copy() for k, v in self.parameters().items()}
        out.update({k: np.array(v, copy=True) for k, v in self.buffers().items()})
        return out

    def n_parameters(self):
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for _, layer in self.named_layers():
            if isinstance(layer, BatchNorm1d):
                layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    # -- passes --

    def forward(self, inputs):
        """``inputs`` is a list of channel-last batches: one, or (ICA, MCA) for im_stack."""
        inputs = [np.asarray(x, self.dtype) for x in inputs]
        if len(inputs) != len(self.encoders):
            raise ValueError(f"{self.kind} expects {len(self.encoders)} input(s), got {len(inputs)}")
        feats = [enc.forward(x) for enc, x in zip(self.encoders, inputs)]
        if self.kind == "im_stack":
            head_in = {"global": np.concatenate(feats, axis=1), "ica": feats[0], "mca": feats[1]}
        else:
            head_in = {h: feats[0] for h in HEADS}
        self._feat_len = feats[0].shape[1]
        return np.concatenate([self.heads[h].forward(head_in[h]) for h in HEADS], axis=1)

    def backward(self, dlogits):
        """Accumulate parameter gradients for d(loss)/d(logits)."""
        d = {h: self.heads[h].backward(dlogits[:, 3 * k : 3 * k + 3]) for k, h in enumerate(HEADS)}
        if self.kind == "im_stack":
            F = self._feat_len
            dfeat = [d["global"][:, :F] + d["ica"], d["global"][:, F:] + d["mca"]]
        else:
            dfeat = [d["global"] + d["ica"] + d["mca"]]
        for enc, g in zip(self.encoders, dfeat):
            enc.backward(g)

    def predict(self, inputs):
        was = self.training
        self.eval()
        try:
            return self.forward(inputs)
        finally:
            self.train(was)


def bce_with_logits(logits, targets, mask=None):
    """Mean binary cross-entropy over logits and its gradient w.r.t. the logits.

    ``mask`` (broadcastable to ``logits``) zeroes out entries; the mean is
    taken over the unmasked entries.
    """
    z = np.asarray(logits, np.float64)
    y = np.asarray(targets, np.float64)
    w = np.ones_like(z) if mask is None else np.broadcast_to(np.asarray(mask, np.float64), z.shape)
    n = w.sum()
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float((per * w).sum() / n)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad = (sig - y) * w / n
    return loss, grad


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, np.float64)))


class Adam:
    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


# -- checkpoints: JSON manifest + raw little-endian float32 tensors --

def save_checkpoint(net, directory, extra=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = []
    state = net.state()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        fname = f"{name}.f32"
        (d / fname).write_bytes(arr.tobytes())
        tensors.append({"name": name, "file": fname, "shape": list(arr.shape)})
    manifest = {
        "format": "subrecomb-checkpoint-1",
        "kind": net.kind,
        "encoder": asdict(net.encoder_config),
        "tensors": tensors,
        "extra": extra or {},
    }
    (d / "checkpoint.json").write_text(json.dumps(manifest, indent=1))
    return d / "checkpoint.json"


def load_checkpoint(directory):
    d = Path(directory)
    manifest = json.loads((d / "checkpoint.json").read_text())
    enc = manifest["encoder"]
    net = Network(manifest["kind"], EncoderConfig(tuple(map(tuple, enc["conv_blocks"])), enc["feature_len"],
                                                  enc["input_channels"], enc["weight_init_seed"]))
    state = {
        t["name"]: np.frombuffer((d / t["file"]).read_bytes(), dtype="<f4").reshape(t["shape"])
        for t in manifest["tensors"]
    }
    net.load_state(state)
    return net


def parameter_digest(net):
    h = hashlib.sha256()
    state = net.state()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name]).tobytes())
    return h.hexdigest()
