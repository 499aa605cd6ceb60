"""From-scratch stacked LSTM regressor with truncated BPTT and Adam.

Each layer keeps its gate weights in concatenated arrays (column blocks in
the order input, forget, output, candidate); a linear dense head maps the
final top-layer hidden state to the feature vector.  An optional fixed
dropout mask on the last LSTM layer supports the dropout-variant ensembles:
masked units are zeroed everywhere (recurrence and output) and survivors are
rescaled by 1/(1-rate), in training and prediction alike.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 300
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


class TrainingDivergence(RuntimeError):
    """Raised when the loss becomes non-finite."""


class LstmLayerParams:
    """Gate weights of one LSTM layer.

    wx: (input_width, 4*hidden), wh: (hidden, 4*hidden), b: (4*hidden,),
    with column blocks ordered [input, forget, output, candidate].
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, wx, wh, b):
        self.wx = np.asarray(wx, dtype=float)
        self.wh = np.asarray(wh, dtype=float)
        self.b = np.asarray(b, dtype=float)
        h = self.wh.shape[0]
        if self.wx.shape[1] != 4 * h or self.wh.shape[1] != 4 * h or self.b.shape != (4 * h,):
            raise ValueError("inconsistent gate weight shapes")

    @property
    def input_width(self):
        return self.wx.shape[0]

    @property
    def hidden_width(self):
        return self.wh.shape[0]

    def block(self, kind, gate):
        """Single gate block, e.g. block('x', 'f') -> W_xf."""
        h = self.hidden_width
        g = self.GATES.index(gate)
        sl = slice(g * h, (g + 1) * h)
        if kind == "x":
            return self.wx[:, sl]
        if kind == "h":
            return self.wh[:, sl]
        return self.b[sl]

    @classmethod
    def initialize(cls, input_width, hidden_width, rng):
        """Uniform +-1/sqrt(fan_in) weights, zero biases, forget bias +1."""
        sx = 1.0 / np.sqrt(input_width)
        sh = 1.0 / np.sqrt(hidden_width)
        wx = rng.uniform(-sx, sx, size=(input_width, 4 * hidden_width))
        wh = rng.uniform(-sh, sh, size=(hidden_width, 4 * hidden_width))
        b = np.zeros(4 * hidden_width)
        b[hidden_width : 2 * hidden_width] = 1.0
        return cls(wx, wh, b)


def cell_forward(params: LstmLayerParams, x_t, h_prev, c_prev):
    """One LSTM cell step; accepts (d,) vectors or (N, d) batches."""
    h = params.hidden_width
    z = x_t @ params.wx + h_prev @ params.wh + params.b
    i = sigmoid(z[..., :h])
    f = sigmoid(z[..., h : 2 * h])
    o = sigmoid(z[..., 2 * h : 3 * h])
    g = np.tanh(z[..., 3 * h :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


class LstmNetwork:
    """Stacked LSTM layers plus a linear dense head."""

    def __init__(self, layers, dense_w, dense_b, dropout_mask=None, dropout_rate=0.0,
                 window_length=None):
        self.layers = list(layers)
        self.dense_w = np.asarray(dense_w, dtype=float)
        self.dense_b = np.asarray(dense_b, dtype=float)
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_width != lower.hidden_width:
                raise ValueError("layer widths do not chain")
        if self.dense_w.shape[0] != self.layers[-1].hidden_width:
            raise ValueError("dense head width mismatch")
        self.dropout_mask = None if dropout_mask is None else np.asarray(dropout_mask, dtype=float)
        self.dropout_rate = float(dropout_rate)
        self.window_length = window_length

    @property
    def input_dim(self):
        return self.layers[0].input_width

    @property
    def output_dim(self):
        return self.dense_w.shape[1]

    @property
    def hidden_widths(self):
        return [l.hidden_width for l in self.layers]

    def copy(self):
        return copy.deepcopy(self)

    def _mask_scale(self):
        if self.dropout_mask is None:
            return None
        return self.dropout_mask / (1.0 - self.dropout_rate) if self.dropout_rate < 1 else self.dropout_mask

    @classmethod
    def initialize(cls, input_dim, hidden_widths, output_dim, rng, window_length=None,
                   dropout_mask=None, dropout_rate=0.0):
        layers = []
        prev = input_dim
        for w in hidden_widths:
            layers.append(LstmLayerParams.initialize(prev, w, rng))
            prev = w
        sd = 1.0 / np.sqrt(prev)
        dense_w = rng.uniform(-sd, sd, size=(prev, output_dim))
        dense_b = np.zeros(output_dim)
        return cls(layers, dense_w, dense_b, dropout_mask=dropout_mask,
                   dropout_rate=dropout_rate, window_length=window_length)


def forward_batch(net: LstmNetwork, x, cache=False):
    """Run a (N, L, d) batch; returns (N, d_out) outputs and optional caches."""
    x = np.asarray(x, dtype=float)
    n, steps, _ = x.shape
    caches = []
    inp = x
    mask_scale = net._mask_scale()
    for li, layer in enumerate(net.layers):
        hdim = layer.hidden_width
        h = np.zeros((n, hdim))
        c = np.zeros((n, hdim))
        hs = np.empty((steps, n, hdim))
        layer_cache = [] if cache else None
        masked = mask_scale is not None and li == len(net.layers) - 1
        for t in range(steps):
            x_t = inp[:, t] if li == 0 else inp[t]
            z = x_t @ layer.wx + h @ layer.wh + layer.b
            i = sigmoid(z[:, :hdim])
            f = sigmoid(z[:, hdim : 2 * hdim])
            o = sigmoid(z[:, 2 * hdim : 3 * hdim])
            g = np.tanh(z[:, 3 * hdim :])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            if masked:
                h_new = h_new * mask_scale
            if cache:
                layer_cache.append((x_t, h, c, i, f, o, g, tanh_c))
            h, c = h_new, c_new
            hs[t] = h
        caches.append((layer_cache, hs))
        inp = hs
    out = inp[-1] @ net.dense_w + net.dense_b
    return (out, caches) if cache else out


def network_forward(net: LstmNetwork, window):
    """Single-window forward pass; window is (L, d_in)."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2 or window.shape[1] != net.input_dim:
        raise ValueError("window must be (L, input_dim)")
    return forward_batch(net, window[None, :, :])[0]


@dataclass
class Gradients:
    layers: list  # per layer: dict with dwx, dwh, db
    dense_w: np.ndarray
    dense_b: np.ndarray

    def as_list(self):
        arrs = []
        for g in self.layers:
            arrs.extend([g["dwx"], g["dwh"], g["db"]])
        arrs.extend([self.dense_w, self.dense_b])
        return arrs


def _param_arrays(net: LstmNetwork):
    arrs = []
    for layer in net.layers:
        arrs.extend([layer.wx, layer.wh, layer.b])
    arrs.extend([net.dense_w, net.dense_b])
    return arrs


def mse_loss(pred, target):
    return float(np.mean((pred - target) ** 2))


def backprop_bptt(net: LstmNetwork, x, y):
    """Exact gradients of the batch-mean MSE; returns (loss, Gradients)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    out, caches = forward_batch(net, x, cache=True)
    loss = mse_loss(out, y)
    if not np.isfinite(loss):
        raise TrainingDivergence("non-finite loss in forward pass")
    n, steps, _ = x.shape
    dout = 2.0 * (out - y) / out.size

    top_hs = caches[-1][1]
    grad_dense_w = top_hs[-1].T @ dout
    grad_dense_b = dout.sum(axis=0)

    # gradient w.r.t. each timestep's output of the top layer
    dh_seq = np.zeros_like(top_hs)
    dh_seq[-1] = dout @ net.dense_w.T

    mask_scale = net._mask_scale()
    layer_grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        layer_cache, _ = caches[li]
        hdim = layer.hidden_width
        masked = mask_scale is not None and li == len(net.layers) - 1
        dwx = np.zeros_like(layer.wx)
        dwh = np.zeros_like(layer.wh)
        db = np.zeros_like(layer.b)
        dx_seq = np.zeros((steps, n, layer.input_width))
        dh_rec = np.zeros((n, hdim))
        dc_next = np.zeros((n, hdim))
        for t in range(steps - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, o, g, tanh_c = layer_cache[t]
            dh = dh_seq[t] + dh_rec
            if masked:
                dh = dh * mask_scale
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)],
                axis=1,
            )
            dwx += x_t.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx_seq[t] = dz @ layer.wx.T
            dh_rec = dz @ layer.wh.T
        layer_grads[li] = {"dwx": dwx, "dwh": dwh, "db": db}
        if li > 0:
            dh_seq = dx_seq
    return loss, Gradients(layers=layer_grads, dense_w=grad_dense_w, dense_b=grad_dense_b)


class AdamOptimizer:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g**2
            p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def evaluate(net: LstmNetwork, samples_x, samples_y, batch_size=256):
    losses = []
    weights = []
    for start in range(0, len(samples_x), batch_size):
        xb = samples_x[start : start + batch_size]
        yb = samples_y[start : start + batch_size]
        losses.append(mse_loss(forward_batch(net, xb), yb))
        weights.append(len(xb))
    return float(np.average(losses, weights=weights))


def train(net: LstmNetwork, train_xy, val_xy, cfg: TrainConfig):
    """Mini-batch Adam with early stopping on the validation loss.

    train_xy / val_xy are (inputs, targets) array pairs.  Returns the
    best-validation network and a history dict.
    """
    x_tr, y_tr = train_xy
    x_va, y_va = val_xy
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamOptimizer(_param_arrays(net), cfg)
    history = {"train_loss": [], "val_loss": []}
    best_val = np.inf
    best_params = None
    best_epoch = -1
    stall = 0
    n = len(x_tr)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = backprop_bptt(net, x_tr[idx], y_tr[idx])
            opt.step(_param_arrays(net), grads.as_list())
            epoch_losses.append(loss)
        val_loss = evaluate(net, x_va, y_va)
        if not np.isfinite(val_loss):
            raise TrainingDivergence(f"validation loss diverged at epoch {epoch}")
        history["train_loss"].append(float(np.mean(epoch_losses)))
        history["val_loss"].append(val_loss)
        if val_loss < best_val - 1e-15:
            best_val = val_loss
            best_params = [p.copy() for p in _param_arrays(net)]
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if best_params is not None:
        for p, bp in zip(_param_arrays(net), best_params):
            p[...] = bp
    history["best_epoch"] = best_epoch
    history["best_val_loss"] = float(best_val)
    return net, history


def predict_autoregressive(net: LstmNetwork, seed_window, n_steps: int):
    """Roll the network forward on its own predictions.

    Returns an (n_steps, d) array; the seed window is not included.
    """
    window = np.asarray(seed_window, dtype=float).copy()
    out = np.empty((n_steps, net.output_dim))
    for k in range(n_steps):
        pred = network_forward(net, window)
        out[k] = pred
        window = np.vstack([window[1:], pred])
    return out


# ---------------------------------------------------------------------------
# checkpoint serialization

def save_checkpoint(net: LstmNetwork, path, train_meta=None):
    blocks = []
    for layer in net.layers:
        entry = {"input_width": layer.input_width, "hidden_width": layer.hidden_width}
        for gate in LstmLayerParams.GATES:
            entry[f"w_x{gate}"] = layer.block("x", gate).ravel().tolist()
            entry[f"w_h{gate}"] = layer.block("h", gate).ravel().tolist()
            entry[f"b_{gate}"] = layer.block("b", gate).tolist()
        blocks.append(entry)
    doc = {
        "arch": net.hidden_widths,
        "input_dim": net.input_dim,
        "output_dim": net.output_dim,
        "window_length": net.window_length,
        "layers": blocks,
        "dense_w": net.dense_w.ravel().tolist(),
        "dense_b": net.dense_b.tolist(),
        "dropout_mask": None if net.dropout_mask is None else net.dropout_mask.tolist(),
        "dropout_rate": net.dropout_rate,
        "train_meta": train_meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    layers = []
    for entry in doc["layers"]:
        iw, hw = entry["input_width"], entry["hidden_width"]
        wx = np.concatenate(
            [np.array(entry[f"w_x{g}"]).reshape(iw, hw) for g in LstmLayerParams.GATES], axis=1)
        wh = np.concatenate(
            [np.array(entry[f"w_h{g}"]).reshape(hw, hw) for g in LstmLayerParams.GATES], axis=1)
        b = np.concatenate([np.array(entry[f"b_{g}"]) for g in LstmLayerParams.GATES])
        layers.append(LstmLayerParams(wx, wh, b))
    dense_w = np.array(doc["dense_w"]).reshape(doc["arch"][-1], doc["output_dim"])
    net = LstmNetwork(
        layers, dense_w, np.array(doc["dense_b"]),
        dropout_mask=None if doc["dropout_mask"] is None else np.array(doc["dropout_mask"]),
        dropout_rate=doc["dropout_rate"], window_length=doc["window_length"])
    return net, doc.get("train_meta", {})
