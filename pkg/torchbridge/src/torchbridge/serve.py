"""External-trainer protocol server.

Watches a protocol directory for the engine's per-trial handshake: read
``trial_{t}/request.json`` plus a weights container, rebuild the model at
the requested channel sizes, load the distilled weights, train the
requested epochs on a toy dataset, and write ``trial_{t}/response.json``
plus the trained container.  Norm-layer statistics are reinitialized on
every rebuild (the weight-transfer rules cover 4D weights only).
"""

import json
import math
import time
from pathlib import Path

import torch

from .containers import (
    container_shapes,
    conv_from_engine,
    conv_to_engine,
    linear_from_engine,
    linear_to_engine,
    read_container,
    write_container,
)
from .export import UnsupportedModel


def make_toy_dataset(samples=500, size=8, channels=1, classes=2, seed=0):
    """Oriented sinusoid patches: class = stripe orientation."""
    gen = torch.Generator().manual_seed(int(seed))
    coords = torch.arange(size, dtype=torch.float32)
    images = torch.empty(samples, channels, size, size)
    labels = torch.arange(samples) % classes
    for i in range(samples):
        freq = int(torch.randint(1, 4, (1,), generator=gen))
        phase = float(torch.rand(1, generator=gen)) * 2.0 * math.pi
        wave = torch.sin(2.0 * math.pi * freq * coords / size + phase)
        img = wave.repeat(size, 1)
        if labels[i] % 2 == 1:
            img = img.t()
        noise = 0.1 * torch.randn(size, size, generator=gen)
        images[i] = (img + noise).expand(channels, size, size)
    return images, labels


def _atomic_write(path, text):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _load_weights_into(model, tensors, layer_map):
    named = dict(model.named_modules())
    for layer_id, arr in tensors.items():
        path = layer_map.get(layer_id, layer_id)
        module = named.get(path) or named.get(path.replace("_", "."))
        if module is None:
            raise UnsupportedModel(f"model factory produced no module for {layer_id!r}")
        if isinstance(module, torch.nn.Conv2d):
            w = conv_from_engine(arr)
        elif isinstance(module, torch.nn.Linear):
            w = linear_from_engine(arr)
        else:
            raise UnsupportedModel(f"layer {layer_id!r} is not conv/linear")
        if tuple(module.weight.shape) != w.shape:
            raise UnsupportedModel(
                f"layer {layer_id!r}: got {w.shape}, module wants "
                f"{tuple(module.weight.shape)}"
            )
        with torch.no_grad():
            module.weight.copy_(torch.from_numpy(w.copy()))


def _dump_weights(model, layer_ids, layer_map):
    named = dict(model.named_modules())
    out = {}
    for layer_id in layer_ids:
        path = layer_map.get(layer_id, layer_id)
        module = named.get(path) or named.get(path.replace("_", "."))
        w = module.weight.detach().cpu().numpy()
        if isinstance(module, torch.nn.Conv2d):
            out[layer_id] = conv_to_engine(w).astype("float32")
        else:
            out[layer_id] = linear_to_engine(w).astype("float32")
    return out


def serve_trainer(
    protocol_dir,
    model_factory,
    dataset_cfg=None,
    trials=1,
    layer_map=None,
    lr=0.05,
    batch_size=50,
    poll_s=0.2,
    timeout_s=300.0,
):
    """Serve `trials` requests, then return.

    model_factory(shapes) must build a fresh model whose conv/linear modules
    match the per-layer (kh, kw, in, out) shapes; norm layers are sized to
    match and start from fresh statistics.
    """
    cfg = {"samples": 500, "size": 8, "channels": 1, "classes": 2, "seed": 0}
    cfg.update(dataset_cfg or {})
    images, labels = make_toy_dataset(**cfg)
    layer_map = layer_map or {}
    protocol_dir = Path(protocol_dir)
    torch.set_num_threads(1)

    for trial in range(1, trials + 1):
        trial_dir = protocol_dir / f"trial_{trial}"
        request_path = trial_dir / "request.json"
        deadline = time.monotonic() + timeout_s
        while not request_path.is_file():
            if time.monotonic() > deadline:
                raise TimeoutError(f"no request for trial {trial}")
            time.sleep(poll_s)
        try:
            request = json.loads(request_path.read_text())
            weights_dir = trial_dir / request["weights_dir"]
            shapes = container_shapes(weights_dir)
            tensors = read_container(weights_dir)
            torch.manual_seed(int(request["seed"]) + trial)
            model = model_factory(shapes)
            _load_weights_into(model, tensors, layer_map)

            model.train()
            optimizer = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
            loss_fn = torch.nn.CrossEntropyLoss()
            loss_value = float("nan")
            for _ in range(int(request["epochs"])):
                perm = torch.randperm(len(images))
                for start in range(0, len(images), batch_size):
                    idx = perm[start:start + batch_size]
                    optimizer.zero_grad()
                    loss = loss_fn(model(images[idx]), labels[idx])
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
                    optimizer.step()
            model.eval()
            with torch.no_grad():
                logits = model(images)
                loss_value = float(loss_fn(logits, labels))
                acc = float((logits.argmax(dim=1) == labels).float().mean())

            write_container(
                _dump_weights(model, list(tensors), layer_map), trial_dir / "trained"
            )
            response = {
                "trial": trial,
                "weights_dir": "trained",
                "train_loss": loss_value,
                "train_acc": acc,
            }
        except Exception as exc:  # report through the protocol, then stop
            _atomic_write(
                trial_dir / "response.json",
                json.dumps({"trial": trial, "error": str(exc)}) + "\n",
            )
            raise
        _atomic_write(
            trial_dir / "response.json", json.dumps(response, indent=2) + "\n"
        )
