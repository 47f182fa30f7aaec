"""Trainers that supply the "train for e epochs" step of a search trial.

Three implementations share one calling convention
``train(weights, plan, epochs, trial, seed) -> (weights, loss, acc)``:

* ToyTrainer: a deterministic from-scratch CNN trainer (im2col convolution,
  ReLU, average pooling, global-average-pool + linear head, softmax
  cross-entropy, plain SGD) on a procedural two-class 8x8 dataset.  Exact
  analytic gradients, desk-scale by design.
* MockTrainer: replaces weights with tensors constructed so each endpoint's
  quality score equals a caller-chosen response surface of its group size.
  Used to give searches a known optimum in tests.
* ExternalTrainer: file handshake with an out-of-process trainer: writes
  ``trial_{t}/request.json`` plus a weights container, polls for
  ``trial_{t}/response.json`` plus the trained container.
"""

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .graph import Endpoint, Side, WEIGHTED_KINDS
from .metric import layer_metric
from .tensorio import WeightTensor, read_weights, write_weights


class TrainerError(Exception):
    """A trainer could not produce a valid response."""


@dataclass
class TrainerRequest:
    trial: int
    epochs: int
    seed: int
    plan: dict
    weights_dir: str

    def to_dict(self):
        return {
            "trial": self.trial,
            "epochs": self.epochs,
            "seed": self.seed,
            "plan": dict(self.plan),
            "weights_dir": self.weights_dir,
        }

    @staticmethod
    def from_dict(payload):
        return TrainerRequest(
            trial=int(payload["trial"]),
            epochs=int(payload["epochs"]),
            seed=int(payload["seed"]),
            plan={str(k): int(v) for k, v in payload["plan"].items()},
            weights_dir=str(payload["weights_dir"]),
        )


@dataclass
class TrainerResponse:
    trial: int
    weights_dir: str
    train_loss: float
    train_acc: float

    def to_dict(self):
        return {
            "trial": self.trial,
            "weights_dir": self.weights_dir,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
        }


# --- synthetic dataset --------------------------------------------------------


def make_dataset(seed, samples=256, size=8, noise=0.1):
    """Two-class oriented-stripe images: label 0 varies along x, 1 along y."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 11]))
    coords = np.arange(size)
    images = np.empty((samples, 1, size, size), dtype=np.float64)
    labels = np.arange(samples) % 2
    for i in range(samples):
        freq = rng.integers(1, 4)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        wave = np.sin(2.0 * math.pi * freq * coords / size + phase)
        if labels[i] == 0:
            img = np.tile(wave[None, :], (size, 1))
        else:
            img = np.tile(wave[:, None], (1, size))
        images[i, 0] = img + noise * rng.standard_normal((size, size))
    return images, labels


# --- toy trainer ---------------------------------------------------------------


def _im2col(x, k):
    b, c, h, w = x.shape
    if k == 1:
        return x.reshape(b, c, h * w)
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (b, c, h, w, k, k)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, h * w)


def _col2im(dcols, shape, k):
    b, c, h, w = shape
    if k == 1:
        return dcols.reshape(b, c, h, w)
    pad = k // 2
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    d = dcols.reshape(b, c, k, k, h, w)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + w] += d[:, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def _softmax_xent(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = -np.mean(np.log(probs[np.arange(n), labels] + 1e-300))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class ToyTrainer:
    """Deterministic from-scratch trainer for the supported desk-scale nets.

    Supported layers: conv with odd kernels up to 3x3 (stride 1, same
    padding), fc as a global-average-pool + linear head feeding the output,
    add, concat, 2x2 average pool, and channel-transparent passthroughs.
    """

    def __init__(
        self,
        graph,
        samples=256,
        image_size=8,
        lr=0.05,
        batch_size=32,
        grad_clip=1.0,
    ):
        self.graph = graph
        self.samples = samples
        self.image_size = image_size
        self.lr = lr
        self.batch_size = batch_size
        # SVD-shrunk weights are ill conditioned; a fixed 0.05 step without
        # clipping demonstrably diverges to NaN within one epoch.
        self.grad_clip = grad_clip
        self._data_cache = {}
        self._validate()

    def _validate(self):
        for node in self.graph.nodes.values():
            if node.kind == "conv":
                kh, kw = node.weight_shape[0], node.weight_shape[1]
                if kh != kw or kh not in (1, 3):
                    raise TrainerError(
                        f"unsupported conv kernel {kh}x{kw} on {node.id!r}: "
                        "the toy trainer handles 1x1 and 3x3 only"
                    )
            if node.kind == "fc":
                after = [n.kind for n in self.graph.successors(node.id)]
                if any(k not in ("output", "other-passthrough") for k in after):
                    raise TrainerError(
                        f"fc node {node.id!r} must feed the output, got {after}"
                    )

    def _dataset(self, seed):
        if seed not in self._data_cache:
            self._data_cache[seed] = make_dataset(
                seed, samples=self.samples, size=self.image_size
            )
        return self._data_cache[seed]

    def _calibrate(self, params, images):
        # Reflection-based channel expansion multiplies a ReLU net's gain by
        # up to 2x per doubled layer (duplicated rows meet duplicated input
        # channels), which fixed-step SGD with no normalization layers cannot
        # survive.  Rescale each layer by a positive scalar so its
        # pre-activation std is 1 on a calibration batch (LSUV-style).  The
        # scaling preserves features and decisions of the ReLU net, and the
        # quality metric is scale invariant, so search semantics are intact.
        for lid, w in params.items():
            kh, kw, cin, _ = w.shape
            target = math.sqrt(2.0 / (kh * kw * cin)) * math.sqrt(w.size)
            norm = float(np.linalg.norm(w))
            if norm > 0.0:
                params[lid] = w * (target / norm)
        batch = images[: self.batch_size]
        for nid in self.graph.topo_order():
            if self.graph.nodes[nid].kind not in WEIGHTED_KINDS:
                continue
            logits, cache = self._run(params, batch, want_cache=True)
            entry = cache["nodes"][nid]
            pre_act = entry["z"] if "z" in entry else logits
            spread = float(np.std(pre_act))
            if spread > 1e-8:
                params[nid] = params[nid] / spread
        return params

    def train(self, weights, plan, epochs, trial, seed):
        images, labels = self._dataset(seed)
        if epochs == 0:
            loss, acc = self._evaluate(weights, images, labels)
            return weights, loss, acc
        params = self._calibrate(
            {k: t.data.astype(np.float64) for k, t in weights.items()}, images
        )
        for epoch in range(epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed) & 0x7FFFFFFF, int(trial), epoch, 7])
            )
            order = rng.permutation(len(images))
            for start in range(0, len(images), self.batch_size):
                batch = order[start:start + self.batch_size]
                _, grads = self.forward_backward(params, images[batch], labels[batch])
                gnorm = math.sqrt(
                    sum(float(np.sum(g * g)) for g in grads.values())
                )
                scale = self.lr * min(1.0, self.grad_clip / max(gnorm, 1e-12))
                for lid, grad in grads.items():
                    params[lid] -= scale * grad
        trained = {k: WeightTensor(k, v) for k, v in params.items()}
        loss, acc = self._evaluate(trained, images, labels)
        return trained, loss, acc

    def _evaluate(self, weights, images, labels):
        params = {k: t.data.astype(np.float64) for k, t in weights.items()}
        logits = self.forward(params, images)
        loss, _ = _softmax_xent(logits, labels)
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        if not np.isfinite(loss):
            raise TrainerError("non-finite training loss")
        return float(loss), acc

    def forward(self, params, images):
        logits, _ = self._run(params, images, want_cache=False)
        return logits

    def forward_backward(self, params, images, labels):
        logits, cache = self._run(params, images, want_cache=True)
        loss, dlogits = _softmax_xent(logits, labels)
        grads = self._backward(params, cache, dlogits)
        return loss, grads

    def _run(self, params, images, want_cache):
        acts = {}
        raw = set()  # nodes still carrying (pooled) raw input data
        cache = {"order": [], "nodes": {}} if want_cache else None
        out_node = None
        for nid in self.graph.topo_order():
            node = self.graph.nodes[nid]
            kind = node.kind
            entry = {}
            if kind == "input":
                acts[nid] = images
                raw.add(nid)
            elif kind == "conv":
                pred = self.graph.predecessors(nid)[0].id
                x = acts[pred]
                cin = params[nid].shape[2]
                if pred in raw and x.shape[1] != cin:
                    reps = -(-cin // x.shape[1])
                    x = np.tile(x, (1, reps, 1, 1))[:, :cin]
                if x.shape[1] != cin:
                    raise TrainerError(
                        f"conv {nid!r}: input has {x.shape[1]} channels, weight "
                        f"expects {cin}"
                    )
                k = params[nid].shape[0]
                cols = _im2col(x, k)
                w2 = params[nid].transpose(2, 0, 1, 3).reshape(-1, params[nid].shape[3])
                z = (cols.transpose(0, 2, 1) @ w2).transpose(0, 2, 1)
                z = z.reshape(x.shape[0], -1, x.shape[2], x.shape[3])
                acts[nid] = np.maximum(z, 0.0)
                entry = {"pred": pred, "cols": cols, "z": z, "xshape": x.shape, "k": k}
            elif kind == "fc":
                pred = self.graph.predecessors(nid)[0].id
                x = acts[pred]
                if x.ndim != 4:
                    raise TrainerError(f"fc {nid!r}: expected a 4D activation")
                xbar = x.mean(axis=(2, 3))
                w2 = params[nid][0, 0]
                if xbar.shape[1] != w2.shape[0]:
                    raise TrainerError(
                        f"fc {nid!r}: input has {xbar.shape[1]} channels, weight "
                        f"expects {w2.shape[0]}"
                    )
                acts[nid] = xbar @ w2
                entry = {"pred": pred, "xbar": xbar, "xshape": x.shape}
            elif kind == "add":
                preds = [p.id for p in self.graph.predecessors(nid)]
                parts = [acts[p] for p in preds]
                if any(p.shape != parts[0].shape for p in parts[1:]):
                    raise TrainerError(
                        f"add {nid!r}: mismatched input shapes "
                        f"{[p.shape for p in parts]}"
                    )
                acts[nid] = sum(parts)
                entry = {"preds": preds}
            elif kind == "concat":
                preds = [p.id for p in self.graph.predecessors(nid)]
                parts = [acts[p] for p in preds]
                acts[nid] = np.concatenate(parts, axis=1)
                entry = {"preds": preds, "splits": [p.shape[1] for p in parts]}
            elif kind == "pool":
                pred = self.graph.predecessors(nid)[0].id
                x = acts[pred]
                b, c, h, w = x.shape
                if h % 2 or w % 2:
                    raise TrainerError(f"pool {nid!r}: odd spatial size {h}x{w}")
                acts[nid] = x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
                if pred in raw:
                    raw.add(nid)
                entry = {"pred": pred, "xshape": x.shape}
            elif kind == "other-passthrough":
                pred = self.graph.predecessors(nid)[0].id
                acts[nid] = acts[pred]
                if pred in raw:
                    raw.add(nid)
                entry = {"pred": pred}
            elif kind == "output":
                pred = self.graph.predecessors(nid)[0].id
                acts[nid] = acts[pred]
                out_node = nid
                entry = {"pred": pred}
            if want_cache:
                cache["order"].append(nid)
                cache["nodes"][nid] = entry
        if out_node is None:
            raise TrainerError("graph has no output node")
        logits = acts[out_node]
        if logits.ndim != 2:
            raise TrainerError("output node did not receive fc logits")
        return logits, cache

    def _backward(self, params, cache, dlogits):
        douts = {}
        grads = {}
        douts[cache["order"][-1]] = dlogits

        def push(nid, grad):
            if nid in douts:
                douts[nid] = douts[nid] + grad
            else:
                douts[nid] = grad

        for nid in reversed(cache["order"]):
            node = self.graph.nodes[nid]
            if nid not in douts:
                continue
            dout = douts[nid]
            entry = cache["nodes"][nid]
            kind = node.kind
            if kind == "conv":
                z, cols, k = entry["z"], entry["cols"], entry["k"]
                dz = dout * (z > 0.0)
                b = dz.shape[0]
                dzp = dz.reshape(b, dz.shape[1], -1).transpose(0, 2, 1)
                w2 = params[nid].transpose(2, 0, 1, 3).reshape(-1, params[nid].shape[3])
                dw2 = np.einsum("bkp,bpo->ko", cols, dzp)
                cin, kk = params[nid].shape[2], k
                grads[nid] = (
                    dw2.reshape(cin, kk, kk, -1).transpose(1, 2, 0, 3)
                )
                dcols = (dzp @ w2.T).transpose(0, 2, 1)
                push(entry["pred"], _col2im(dcols, entry["xshape"], k))
            elif kind == "fc":
                xbar, xshape = entry["xbar"], entry["xshape"]
                grads[nid] = (xbar.T @ dout)[None, None]
                dxbar = dout @ params[nid][0, 0].T
                b, c, h, w = xshape
                push(
                    entry["pred"],
                    np.broadcast_to(dxbar[:, :, None, None] / (h * w), xshape),
                )
            elif kind == "add":
                for pred in entry["preds"]:
                    push(pred, dout)
            elif kind == "concat":
                offset = 0
                for pred, width in zip(entry["preds"], entry["splits"]):
                    push(pred, dout[:, offset:offset + width])
                    offset += width
            elif kind == "pool":
                b, c, h, w = entry["xshape"]
                up = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
                push(entry["pred"], up)
            elif kind in ("other-passthrough", "output"):
                push(entry["pred"], dout)
        return grads


# --- mock trainer ----------------------------------------------------------------


def solve_spectrum(qc_target, channels, tau=0.01, kappa_max=50.0):
    """Singular spectrum of length `channels` whose quality score is qc_target.

    Picks an effective rank and condition number satisfying
    arctan((n_eff/channels)/(1 - 1/kappa)) == qc_target.  The retained part
    is flat ([kappa, ..., kappa, 1]) so no single row of the shaped tensor
    concentrates mass, which keeps the transportation layout inside a 3x3
    kernel's capacity; below it sits a sub-threshold tail.
    """
    half_pi = math.pi / 2
    if not 0.0 <= qc_target <= half_pi:
        raise ValueError(f"QC target {qc_target} outside [0, pi/2]")
    if qc_target == 0.0:
        return np.zeros(channels)
    if qc_target >= half_pi - 1e-12:
        return np.ones(channels)
    t = math.tan(qc_target)
    n_eff = min(channels, int(math.floor(channels * t * (1.0 - 1.0 / kappa_max))))
    if n_eff < 2:
        raise ValueError(
            f"QC target {qc_target:.6f} unreachable for {channels} channels: "
            "needs an effective rank below 2"
        )
    ratio = n_eff / channels
    kappa = 1.0 / (1.0 - ratio / t)
    spectrum = np.zeros(channels)
    spectrum[: n_eff - 1] = kappa
    spectrum[n_eff - 1] = 1.0
    return spectrum


def _northwest_cells(row_sums, col_sums):
    tiny = 1e-12 * max(float(np.sum(row_sums)), 1e-300)
    rows = row_sums.astype(np.float64).copy()
    cols = col_sums.astype(np.float64).copy()
    cells = []
    i = j = 0
    while i < len(rows) and j < len(cols):
        mass = min(rows[i], cols[j])
        if mass > tiny:
            cells.append((i, j, mass))
        rows[i] -= mass
        cols[j] -= mass
        if rows[i] <= tiny:
            i += 1
        elif cols[j] <= tiny:
            j += 1
    return cells


def build_shaped_tensor(shape, qc_in, qc_out, tau=0.01):
    """4D weight whose IN unfold scores qc_in and OUT unfold scores qc_out.

    Places monomial mass patterns in separate kernel positions so both
    unfoldings have exactly diagonal Gram matrices, making the two spectra
    independently controllable (up to the shared total energy, removed by
    rescaling one side).
    """
    kh, kw, n_in, n_out = shape
    alpha = solve_spectrum(qc_in, n_in, tau)
    beta = solve_spectrum(qc_out, n_out, tau)
    ea, eb = float(np.sum(alpha**2)), float(np.sum(beta**2))
    if ea == 0.0 and eb == 0.0:
        return np.zeros(shape)
    if ea == 0.0 or eb == 0.0:
        raise ValueError(
            "QC targets 0 and nonzero on the two sides of one layer are "
            "mutually unreachable (shared energy)"
        )
    beta = beta * math.sqrt(ea / eb)
    cells = _northwest_cells(alpha**2, beta**2)
    positions = [(h, w) for h in range(kh) for w in range(kw)]
    used = {p: (set(), set()) for p in positions}
    tensor = np.zeros(shape)
    for row, col, mass in cells:
        for pos in positions:
            used_rows, used_cols = used[pos]
            if row not in used_rows and col not in used_cols:
                tensor[pos[0], pos[1], row, col] = math.sqrt(mass)
                used_rows.add(row)
                used_cols.add(col)
                break
        else:
            raise ValueError(
                f"unreachable QC targets ({qc_in:.4f}, {qc_out:.4f}) for shape "
                f"{shape}: kernel capacity exhausted"
            )
    return tensor


def surface_from_spec(spec):
    """Build a size -> QC surface from its JSON description.

    {"kind": "step", "threshold": 24, "high": 1.57, "low": 0.59} or
    {"kind": "table", "points": [[size, qc], ...]} (piecewise linear).
    """
    kind = spec.get("kind", "table")
    if kind == "step":
        high, low = float(spec["high"]), float(spec["low"])
        threshold = int(spec["threshold"])
        return lambda size: high if size <= threshold else low
    if kind == "table":
        points = sorted((int(s), float(q)) for s, q in spec["points"])
        xs = np.array([p[0] for p in points], dtype=np.float64)
        ys = np.array([p[1] for p in points], dtype=np.float64)
        return lambda size: float(np.interp(size, xs, ys))
    raise ValueError(f"unknown surface kind {kind!r}")


class MockTrainer:
    """Replaces weights with tensors whose endpoint scores follow a surface.

    `surface` maps a group's channel size to the QC value every endpoint of
    that group should exhibit after "training".
    """

    def __init__(self, graph, deps, surface, tau=0.01):
        self.graph = graph
        self.deps = deps
        self.surface = surface
        self.tau = tau

    def train(self, weights, plan, epochs, trial, seed):
        if not plan:
            raise ValueError("empty channel plan")
        out = {}
        for layer in self.graph.weighted_layers():
            size_in = plan[self.deps.group_of(Endpoint(layer.id, Side.IN))]
            size_out = plan[self.deps.group_of(Endpoint(layer.id, Side.OUT))]
            shape = (layer.weight_shape[0], layer.weight_shape[1], size_in, size_out)
            data = build_shaped_tensor(
                shape, self.surface(size_in), self.surface(size_out), self.tau
            )
            tensor = WeightTensor(layer.id, data)
            for side, target in ((Side.IN, size_in), (Side.OUT, size_out)):
                got = layer_metric(tensor, side, self.tau).qc
                want = self.surface(target)
                if abs(got - want) > 1e-6:
                    raise ValueError(
                        f"{layer.id}.{side.value}: constructed QC {got!r} misses "
                        f"target {want!r}"
                    )
            out[layer.id] = tensor
        return out, 0.0, 0.0


# --- external trainer (file handshake) --------------------------------------------


def _atomic_write(path, text):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class ExternalTrainer:
    """Delegates training to a process watching `protocol_dir`.

    Per trial t the engine writes ``trial_{t}/request.json`` and a weights
    container, then polls (0.2 s default) for ``trial_{t}/response.json``
    plus the trained container.  Shape drift or timeouts abort the search.
    """

    def __init__(self, protocol_dir, timeout_s=120.0, poll_s=0.2):
        self.protocol_dir = Path(protocol_dir)
        self.timeout_s = timeout_s
        self.poll_s = poll_s

    def train(self, weights, plan, epochs, trial, seed):
        trial_dir = self.protocol_dir / f"trial_{trial}"
        trial_dir.mkdir(parents=True, exist_ok=True)
        write_weights(weights, trial_dir / "weights")
        request = TrainerRequest(trial, epochs, seed, plan, "weights")
        _atomic_write(
            trial_dir / "request.json",
            json.dumps(request.to_dict(), indent=2, sort_keys=True) + "\n",
        )

        response_path = trial_dir / "response.json"
        deadline = time.monotonic() + self.timeout_s
        payload = None
        while payload is None:
            if response_path.is_file():
                try:
                    payload = json.loads(response_path.read_text())
                except json.JSONDecodeError:
                    payload = None  # partial write, retry
            if payload is None:
                if time.monotonic() > deadline:
                    raise TrainerError(
                        f"trial {trial}: no external response within {self.timeout_s}s"
                    )
                time.sleep(self.poll_s)

        if "error" in payload:
            raise TrainerError(f"trial {trial}: external trainer error: {payload['error']}")
        trained = read_weights(trial_dir / payload.get("weights_dir", "trained"))
        for lid, tensor in weights.items():
            if lid not in trained:
                raise TrainerError(f"trial {trial}: response lost layer {lid!r}")
            if trained[lid].shape != tensor.shape:
                raise TrainerError(
                    f"trial {trial}: layer {lid!r} came back with shape "
                    f"{trained[lid].shape}, expected {tensor.shape}"
                )
        extra = set(trained) - set(weights)
        if extra:
            raise TrainerError(f"trial {trial}: response added layers {sorted(extra)}")
        return trained, float(payload["train_loss"]), float(payload["train_acc"])


def serve_echo(protocol_dir, trials, poll_s=0.05, timeout_s=60.0):
    """Minimal protocol server: returns the incoming weights untouched."""
    protocol_dir = Path(protocol_dir)
    for t in range(1, trials + 1):
        trial_dir = protocol_dir / f"trial_{t}"
        request_path = trial_dir / "request.json"
        deadline = time.monotonic() + timeout_s
        while not request_path.is_file():
            if time.monotonic() > deadline:
                raise TrainerError(f"echo server: no request for trial {t}")
            time.sleep(poll_s)
        request = TrainerRequest.from_dict(json.loads(request_path.read_text()))
        weights = read_weights(trial_dir / request.weights_dir)
        write_weights(weights, trial_dir / "trained")
        response = TrainerResponse(t, "trained", 0.0, 0.0)
        _atomic_write(
            trial_dir / "response.json",
            json.dumps(response.to_dict(), indent=2, sort_keys=True) + "\n",
        )
