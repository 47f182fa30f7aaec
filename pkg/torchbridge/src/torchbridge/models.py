"""Small parameterizable models used by the tests and the CLI demo."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class TinyResidual(nn.Module):
    """3-conv residual net: stem -> two body convs -> skip add -> GAP -> head.

    Widths come from a {layer_id: (kh, kw, in, out)} shape map so the serve
    loop can rebuild it at whatever channel plan the engine requests.  Batch
    norms are sized to match and start fresh on every rebuild.
    """

    DEFAULT_SHAPES = {
        "stem": (3, 3, 1, 8),
        "body1": (3, 3, 8, 8),
        "body2": (3, 3, 8, 8),
        "head": (1, 1, 8, 2),
    }

    def __init__(self, shapes=None):
        super().__init__()
        shapes = dict(self.DEFAULT_SHAPES, **(shapes or {}))
        self.stem = nn.Conv2d(
            shapes["stem"][2], shapes["stem"][3], shapes["stem"][0],
            padding="same", bias=False,
        )
        self.bn_stem = nn.BatchNorm2d(shapes["stem"][3])
        self.body1 = nn.Conv2d(
            shapes["body1"][2], shapes["body1"][3], shapes["body1"][0],
            padding="same", bias=False,
        )
        self.bn1 = nn.BatchNorm2d(shapes["body1"][3])
        self.body2 = nn.Conv2d(
            shapes["body2"][2], shapes["body2"][3], shapes["body2"][0],
            padding="same", bias=False,
        )
        self.bn2 = nn.BatchNorm2d(shapes["body2"][3])
        self.head = nn.Linear(shapes["head"][2], shapes["head"][3], bias=False)

    def forward(self, x):
        s = F.relu(self.bn_stem(self.stem(x)))
        y = F.relu(self.bn1(self.body1(s)))
        z = self.bn2(self.body2(y))
        joined = F.relu(z + s)
        pooled = F.adaptive_avg_pool2d(joined, 1).flatten(1)
        return self.head(pooled)


class TinyRecurrent(nn.Module):
    """Contains an LSTM cell; used to check the unsupported-model error."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Conv2d(1, 4, 3, padding="same", bias=False)
        self.rnn = nn.LSTM(input_size=4, hidden_size=4, batch_first=True)
        self.head = nn.Linear(4, 2, bias=False)

    def forward(self, x):
        y = self.stem(x)
        seq = y.mean(dim=2).permute(0, 2, 1)
        out, _ = self.rnn(seq)
        return self.head(out[:, -1])
