#!/usr/bin/env python3
"""Convert ImageNet VGG-16/VGG-19 convolution weights into a weight archive
that `autoseg` loads as pre-trained encoder weights.

Sources:
  --torch PATH   torchvision state dict (vgg16/vgg19 or their _bn-free file)
  --keras PATH   Keras HDF5 weights (include_top or notop)

Layers are renamed `convB_I.weight` / `convB_I.bias`; kernels are written
as [kh, kw, cin, cout] float32. Fully connected layers are dropped.
"""

import argparse
import re
import struct
import sys

import numpy as np

MAGIC = b"WARCHIV1"
BLOCKS = {13: [2, 2, 3, 3, 3], 16: [2, 2, 4, 4, 4]}


def layer_names(n_convs):
    if n_convs not in BLOCKS:
        sys.exit(f"expected 13 (VGG-16) or 16 (VGG-19) convolutions, found {n_convs}")
    names = []
    for b, count in enumerate(BLOCKS[n_convs], start=1):
        names += [f"conv{b}_{i}" for i in range(1, count + 1)]
    return names


def from_torch(path):
    import torch

    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    convs = {}
    for key, value in state.items():
        m = re.fullmatch(r"features\.(\d+)\.(weight|bias)", key)
        if m:
            convs.setdefault(int(m.group(1)), {})[m.group(2)] = value.detach().numpy()
    pairs = []
    for idx in sorted(convs):
        entry = convs[idx]
        if entry["weight"].ndim != 4:
            continue
        # [cout, cin, kh, kw] -> [kh, kw, cin, cout]
        pairs.append((entry["weight"].transpose(2, 3, 1, 0), entry["bias"]))
    return pairs


def from_keras(path):
    import h5py

    pairs = []
    with h5py.File(path, "r") as f:
        root = f["model_weights"] if "model_weights" in f else f
        groups = sorted(
            (g for g in root if re.fullmatch(r"block\d+_conv\d+", g)),
            key=lambda g: tuple(int(x) for x in re.findall(r"\d+", g)),
        )
        for g in groups:
            arrays = []
            root[g].visititems(lambda _, obj: arrays.append(np.asarray(obj)) if isinstance(obj, h5py.Dataset) else None)
            kernel = next(a for a in arrays if a.ndim == 4)
            bias = next(a for a in arrays if a.ndim == 1)
            pairs.append((kernel, bias))
    return pairs


def write_archive(path, entries):
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", len(entries)))
        for name, array in entries:
            data = np.ascontiguousarray(array, dtype="<f4")
            raw = name.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                out.write(struct.pack("<Q", d))
            out.write(data.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--torch", metavar="PATH")
    src.add_argument("--keras", metavar="PATH")
    ap.add_argument("--out", required=True, metavar="PATH")
    args = ap.parse_args()

    pairs = from_torch(args.torch) if args.torch else from_keras(args.keras)
    names = layer_names(len(pairs))
    entries = []
    for name, (w, b) in zip(names, pairs):
        if w.shape[:2] != (3, 3) or b.shape != (w.shape[3],):
            sys.exit(f"{name}: unexpected shapes {w.shape} / {b.shape}")
        entries += [(f"{name}.weight", w), (f"{name}.bias", b)]
    write_archive(args.out, entries)
    print(f"wrote {len(entries)} tensors ({len(pairs)} convolutions) to {args.out}")


if __name__ == "__main__":
    main()
