"""Stacked LSTM language model over event tokens.

Architecture: embedding lookup -> ``n_layers`` LSTM layers -> affine
projection -> softmax over the output vocabulary. Dropout (when masks are
supplied) sits on the non-recurrent connections: embedding output,
between layers and before the projection. Optional recurrent masks drop
units of ``h_{t-1}`` on its way into the gates.

Gate weights of a layer are stored stacked as ``W`` with shape (4m, 2m) in
gate order f, i, c-bar, o; the first ``m`` columns act on ``h_{t-1}`` and the
last ``m`` on ``x_t``. With peepholes, ``P`` (3m, m) holds the cell-state
columns of the f, i and o gates (f and i read ``c_{t-1}``, o reads ``c_t``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _backend
from .nncore import CE_EPS, init_uniform, sigmoid, softmax

CHECKPOINT_MAGIC = b"NXEVCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class LstmLayerParams:
    W: np.ndarray
    b: np.ndarray
    P: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.W.shape[0] // 4

    @property
    def peepholes(self) -> bool:
        return self.P is not None

    def _gate(self, k: int, peep_row: int | None) -> np.ndarray:
        m = self.m
        w = self.W[k * m : (k + 1) * m]
        if self.P is None or peep_row is None:
            return w
        return np.hstack([self.P[peep_row * m : (peep_row + 1) * m], w])

    # per-gate views in the layout [c?, h, x]
    @property
    def W_f(self):
        return self._gate(0, 0)

    @property
    def W_i(self):
        return self._gate(1, 1)

    @property
    def W_c(self):
        return self._gate(2, None)

    @property
    def W_o(self):
        return self._gate(3, 2)

    @property
    def b_f(self):
        return self.b[: self.m]

    @property
    def b_i(self):
        return self.b[self.m : 2 * self.m]

    @property
    def b_c(self):
        return self.b[2 * self.m : 3 * self.m]

    @property
    def b_o(self):
        return self.b[3 * self.m :]

    def validate(self) -> None:
        m = self.m
        if self.W.shape != (4 * m, 2 * m) or self.b.shape != (4 * m,):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")
        if self.P is not None and self.P.shape != (3 * m, m):
            raise ValueError(f"peephole matrix must be {(3 * m, m)}, got {self.P.shape}")


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, m: int, batch: int | None = None) -> "LstmState":
        shape = (m,) if batch is None else (batch, m)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class NetworkParams:
    embedding: np.ndarray
    layers: list[LstmLayerParams]
    out_W: np.ndarray
    out_b: np.ndarray

    @property
    def m(self) -> int:
        return self.embedding.shape[1]

    @property
    def v_in(self) -> int:
        return self.embedding.shape[0]

    @property
    def v_out(self) -> int:
        return self.out_W.shape[0]

    @property
    def peepholes(self) -> bool:
        return self.layers[0].peepholes

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "embedding", self.embedding
        for k, layer in enumerate(self.layers):
            yield f"layer{k}.W", layer.W
            yield f"layer{k}.b", layer.b
            if layer.P is not None:
                yield f"layer{k}.P", layer.P
        yield "out_W", self.out_W
        yield "out_b", self.out_b

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            np.zeros_like(self.embedding),
            [
                LstmLayerParams(np.zeros_like(l.W), np.zeros_like(l.b), None if l.P is None else np.zeros_like(l.P))
                for l in self.layers
            ],
            np.zeros_like(self.out_W),
            np.zeros_like(self.out_b),
        )

    def copy(self) -> "NetworkParams":
        new = self.zeros_like()
        for dst, src in zip(new.arrays(), self.arrays()):
            dst[...] = src
        return new

    def validate(self) -> None:
        m = self.m
        if not self.layers:
            raise ValueError("network needs at least one LSTM layer")
        for layer in self.layers:
            layer.validate()
            if layer.m != m:
                raise ValueError(f"layer width {layer.m} differs from embedding width {m}")
        if self.out_W.shape != (self.v_out, m) or self.out_b.shape != (self.v_out,):
            raise ValueError("output projection shape mismatch")
        for name, a in self.named_arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in {name}")


def init_params(
    rng: np.random.Generator,
    v_in: int,
    v_out: int,
    m: int,
    n_layers: int = 2,
    peepholes: bool = False,
    init_scale: float = 0.1,
    forget_bias: float = 0.1,
) -> NetworkParams:
    """Uniform init on [-init_scale, init_scale]; ``forget_bias`` is added to b_f."""
    emb = init_uniform(rng, v_in, m, init_scale)
    layers = []
    for _ in range(n_layers):
        W = init_uniform(rng, 4 * m, 2 * m, init_scale)
        b = init_uniform(rng, 4 * m, None, init_scale)
        b[:m] += forget_bias
        P = init_uniform(rng, 3 * m, m, init_scale) if peepholes else None
        layers.append(LstmLayerParams(W, b, P))
    out_W = init_uniform(rng, v_out, m, init_scale)
    out_b = init_uniform(rng, v_out, None, init_scale)
    return NetworkParams(emb, layers, out_W, out_b)


def cell_forward(params: LstmLayerParams, state_in: LstmState, x: np.ndarray) -> tuple[LstmState, dict]:
    """One LSTM cell step for a single (unbatched) input vector.

    Written directly from the gate equations; the batched kernels are checked
    against it.
    """
    m = params.m
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m,) or state_in.h.shape != (m,) or state_in.c.shape != (m,):
        raise ValueError(f"expected vectors of length {m}")
    hx = np.concatenate([state_in.h, x])
    if params.peepholes:
        f = sigmoid(params.W_f @ np.concatenate([state_in.c, hx]) + params.b_f)
        i = sigmoid(params.W_i @ np.concatenate([state_in.c, hx]) + params.b_i)
    else:
        f = sigmoid(params.W_f @ hx + params.b_f)
        i = sigmoid(params.W_i @ hx + params.b_i)
    c_bar = np.tanh(params.W_c @ hx + params.b_c)
    c = f * state_in.c + i * c_bar
    if params.peepholes:
        o = sigmoid(params.W_o @ np.concatenate([c, hx]) + params.b_o)
    else:
        o = sigmoid(params.W_o @ hx + params.b_o)
    h = o * np.tanh(c)
    return LstmState(c=c, h=h), {"f": f, "i": i, "c_bar": c_bar, "o": o}


@dataclass
class UnrolledActivations:
    """Everything the backward pass needs from one forward window."""

    ids: np.ndarray  # (T, B)
    inputs: list[np.ndarray]  # per layer, (T, B, m) after dropout
    H: list[np.ndarray]  # per layer, (T+1, B, m)
    C: list[np.ndarray]
    G: list[np.ndarray]  # per layer, (T, B, 4m) activated gates f, i, c-bar, o
    top: np.ndarray  # (T, B, m) last layer output after dropout
    logits: np.ndarray  # (T, B, v_out)
    probs: np.ndarray
    masks: list[np.ndarray] | None = field(default=None)
    recurrent_masks: list[np.ndarray] | None = field(default=None)

    @property
    def steps(self) -> int:
        return self.ids.shape[0]


def _zero_states(params: NetworkParams, B: int) -> list[LstmState]:
    return [LstmState.zeros(params.m, B) for _ in params.layers]


def forward_unrolled(
    params: NetworkParams,
    states: list[LstmState] | None,
    input_ids: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
    kernels=None,
    recurrent_masks: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[LstmState], UnrolledActivations]:
    """Run a (T, B) window of token ids through the network.

    ``states`` gives the incoming (B, m) state per layer (zeros when None).
    ``dropout_masks`` is a list of ``n_layers + 1`` arrays of shape (T, B, m)
    multiplied onto the embedding output, each inter-layer connection and the
    top layer output. ``recurrent_masks`` (one (m,) vector per layer) scales
    ``h_{t-1}`` where it enters the gates; the same units are dropped at every
    step and batch row of the window, so the mask folds into ``W_h``.
    Returns probabilities (T, B, v_out), the outgoing states, and the
    activations for ``backward_unrolled``.
    """
    k = kernels or _backend.kernels
    ids = np.asarray(input_ids)
    if ids.ndim != 2 or ids.shape[0] < 1 or ids.shape[1] < 1:
        raise ValueError(f"input_ids must be a non-empty (T, B) matrix, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= params.v_in:
        raise ValueError(f"token id out of range [0, {params.v_in})")
    T, B = ids.shape
    m = params.m
    L = len(params.layers)
    if states is None:
        states = _zero_states(params, B)
    if dropout_masks is not None and len(dropout_masks) != L + 1:
        raise ValueError(f"expected {L + 1} dropout masks")
    if recurrent_masks is not None and len(recurrent_masks) != L:
        raise ValueError(f"expected {L} recurrent dropout masks")

    x = params.embedding[ids]
    if dropout_masks is not None:
        x = x * dropout_masks[0]
    inputs, Hs, Cs, Gs, new_states = [], [], [], [], []
    for l, layer in enumerate(params.layers):
        x = np.ascontiguousarray(x)
        inputs.append(x)
        XW = (x.reshape(T * B, m) @ layer.W[:, m:].T + layer.b).reshape(T, B, 4 * m)
        H = np.empty((T + 1, B, m))
        C = np.empty((T + 1, B, m))
        H[0] = states[l].h
        C[0] = states[l].c
        G = np.empty((T, B, 4 * m))
        P = None if layer.P is None else np.ascontiguousarray(layer.P)
        Wh = layer.W[:, :m] if recurrent_masks is None else layer.W[:, :m] * recurrent_masks[l]
        k.layer_forward(XW, np.ascontiguousarray(Wh), P, H, C, G)
        Hs.append(H)
        Cs.append(C)
        Gs.append(G)
        new_states.append(LstmState(c=C[T].copy(), h=H[T].copy()))
        x = H[1:]
        if dropout_masks is not None:
            x = x * dropout_masks[l + 1]
    top = np.ascontiguousarray(x)
    logits = (top.reshape(T * B, m) @ params.out_W.T + params.out_b).reshape(T, B, params.v_out)
    probs = softmax(logits, axis=-1)
    acts = UnrolledActivations(ids, inputs, Hs, Cs, Gs, top, logits, probs, dropout_masks, recurrent_masks)
    return probs, new_states, acts


def backward_unrolled(
    params: NetworkParams, acts: UnrolledActivations, target_ids: np.ndarray, kernels=None
) -> tuple[float, NetworkParams]:
    """Mean cross-entropy over the window and its exact gradient.

    Gradients do not flow into the incoming window state (truncated BPTT).
    """
    k = kernels or _backend.kernels
    targets = np.asarray(target_ids)
    T, B = acts.ids.shape
    if targets.shape != (T, B):
        raise ValueError(f"target shape {targets.shape} does not match window {(T, B)}")
    m = params.m
    N = T * B
    L = len(params.layers)
    probs = acts.probs.reshape(N, params.v_out)
    tflat = targets.reshape(N)
    picked = probs[np.arange(N), tflat]
    loss = float(-np.mean(np.log(np.maximum(picked, CE_EPS))))

    grads = params.zeros_like()
    dlogits = probs.copy()
    dlogits[np.arange(N), tflat] -= 1.0
    dlogits /= N
    grads.out_W[...] = dlogits.T @ acts.top.reshape(N, m)
    grads.out_b[...] = dlogits.sum(axis=0)
    dx = (dlogits @ params.out_W).reshape(T, B, m)
    if acts.masks is not None:
        dx = dx * acts.masks[L]
    for l in range(L - 1, -1, -1):
        layer, glayer = params.layers[l], grads.layers[l]
        H, C, G = acts.H[l], acts.C[l], acts.G[l]
        dZ = np.zeros((T, B, 4 * m))
        P = None if layer.P is None else np.ascontiguousarray(layer.P)
        r = None if acts.recurrent_masks is None else acts.recurrent_masks[l]
        Wh = layer.W[:, :m] if r is None else layer.W[:, :m] * r
        k.layer_backward(np.ascontiguousarray(dx), np.ascontiguousarray(Wh), P, H, C, G, dZ)
        dZf = dZ.reshape(N, 4 * m)
        glayer.W[:, :m] = dZf.T @ H[:-1].reshape(N, m)
        if r is not None:
            glayer.W[:, :m] *= r
        glayer.W[:, m:] = dZf.T @ acts.inputs[l].reshape(N, m)
        glayer.b[...] = dZf.sum(axis=0)
        if layer.P is not None:
            glayer.P[: 2 * m] = dZf[:, : 2 * m].T @ C[:-1].reshape(N, m)
            glayer.P[2 * m :] = dZf[:, 3 * m :].T @ C[1:].reshape(N, m)
        dx = (dZf @ layer.W[:, m:]).reshape(T, B, m)
        if acts.masks is not None:
            dx = dx * acts.masks[l]
    np.add.at(grads.embedding, acts.ids.reshape(N), dx.reshape(N, m))
    return loss, grads


def export_states(acts: UnrolledActivations, batch_index: int = 0) -> list[dict]:
    """Per-step hidden and cell state records for one batch column."""
    records = []
    for t in range(acts.steps):
        for l in range(len(acts.H)):
            records.append(
                {
                    "step": t,
                    "layer": l,
                    "h": acts.H[l][t + 1, batch_index].tolist(),
                    "c": acts.C[l][t + 1, batch_index].tolist(),
                }
            )
    return records


def write_states_jsonl(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# -- checkpoints ------------------------------------------------------------
#
# Layout: magic (8 bytes) | u32 LE header length | UTF-8 JSON header | raw
# float64 little-endian arrays, row-major, in header order.


def save_checkpoint(path, params: NetworkParams, meta: dict) -> None:
    arrays = list(params.named_arrays())
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "n_layers": len(params.layers),
        "peepholes": params.peepholes,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if offset + n > len(raw):
            raise ValueError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw[offset : offset + n], dtype="<f8").reshape(shape).astype(np.float64)
        offset += n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after array data")
    layers = [
        LstmLayerParams(arrays[f"layer{k}.W"], arrays[f"layer{k}.b"], arrays.get(f"layer{k}.P"))
        for k in range(header["n_layers"])
    ]
    params = NetworkParams(arrays["embedding"], layers, arrays["out_W"], arrays["out_b"])
    params.validate()
    return params, header["meta"]
