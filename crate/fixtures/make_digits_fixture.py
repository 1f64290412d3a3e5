"""Regenerate the digits fixture model and dataset.

Trains a small CNN on the scikit-learn 8x8 digits set and writes its
weights and a 500-sample held-out split as CTNS tensors. The committed
files are the canonical fixture; rerunning this script is only needed
to change the fixture.
"""
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from sklearn.datasets import load_digits

OUT = Path(__file__).resolve().parent / "digits"
DTYPES = {np.float32: 0, np.int32: 1, np.uint8: 2}


def write_ctns(path, arr):
    arr = np.ascontiguousarray(arr)
    code = DTYPES[arr.dtype.type]
    header = b"CTNS" + struct.pack("<HBB", 1, code, arr.ndim)
    header += struct.pack("<" + "I" * arr.ndim, *arr.shape)
    path.write_bytes(header + arr.astype(arr.dtype.newbyteorder("<")).tobytes())


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.fc = nn.Linear(16 * 2 * 2, 10)

    def forward(self, x):
        x = torch.relu(self.conv1(x))
        x = torch.max_pool2d(torch.relu(self.conv2(x)), 2)
        x = torch.max_pool2d(torch.relu(self.conv3(x)), 2)
        return self.fc(x.flatten(1))


def main():
    torch.manual_seed(7)
    rng = np.random.default_rng(7)
    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None, :, :]
    y = digits.target.astype(np.int32)
    perm = rng.permutation(len(x))
    test_idx, train_idx = perm[:500], perm[500:]

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    xt = torch.from_numpy(x[train_idx])
    yt = torch.from_numpy(y[train_idx]).long()
    for epoch in range(60):
        order = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            b = order[i:i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[b]), yt[b])
            loss.backward()
            opt.step()
    with torch.no_grad():
        pred = net(torch.from_numpy(x[test_idx])).argmax(1).numpy()
    print("held-out accuracy", (pred == y[test_idx]).mean())

    OUT.mkdir(exist_ok=True)
    layers = []
    for name, mod in [("conv1", net.conv1), ("conv2", net.conv2), ("conv3", net.conv3), ("fc", net.fc)]:
        w = mod.weight.detach().numpy().astype(np.float32)
        b = mod.bias.detach().numpy().astype(np.float32)
        write_ctns(OUT / f"{name}.w.ctns", w)
        write_ctns(OUT / f"{name}.b.ctns", b)
    spec = lambda name, kind, **kw: dict(name=name, kind=kind, **kw)
    layers = [
        spec("conv1", "conv", weights="conv1.w.ctns", bias="conv1.b.ctns", stride=1, pad=1),
        spec("relu1", "relu"),
        spec("conv2", "conv", weights="conv2.w.ctns", bias="conv2.b.ctns", stride=1, pad=1),
        spec("relu2", "relu"),
        spec("pool2", "maxpool", pool_size=2, stride=2),
        spec("conv3", "conv", weights="conv3.w.ctns", bias="conv3.b.ctns", stride=1, pad=1),
        spec("relu3", "relu"),
        spec("pool3", "maxpool", pool_size=2, stride=2),
        spec("fc", "fc", weights="fc.w.ctns", bias="fc.b.ctns"),
    ]
    (OUT / "model.json").write_text(json.dumps({"input_dims": [1, 8, 8], "layers": layers}, indent=2) + "\n")
    write_ctns(OUT / "test_images.ctns", x[test_idx])
    write_ctns(OUT / "test_labels.ctns", y[test_idx])
    (OUT / "dataset.json").write_text(json.dumps({"images": "test_images.ctns", "labels": "test_labels.ctns"}, indent=2) + "\n")


if __name__ == "__main__":
    main()
