#!/usr/bin/env python3
"""Convert Keras application weights into tlbench weight containers.

usage: export_keras_weights.py OUT_DIR [--models vgg16,resnet50,...] [--weights imagenet|none]
                               [--reference]

Writes OUT_DIR/<model>.tlbw for each backbone (no classification top). The
container is "TLBW", uint32 version 1, uint32 entry count, then per entry a
uint32 name length, the name, four int32 dims (N, C, H, W) and float32 data.

--reference also writes <model>.ref.bin: a fixed random input batch and the
Keras base output, both NCHW float32, for checking the port layer by layer.
Downloading ImageNet weights needs network access; run it once on a machine
that has it and copy the .tlbw files into the weights directory.
"""
import argparse
import struct
import sys
from pathlib import Path

import numpy as np

MODELS = {
    "inceptionv3": ("InceptionV3", None),
    "xception": ("Xception", None),
    "densenet121": ("DenseNet121", None),
    "mobilenet": ("MobileNet", None),
    "resnet50": ("ResNet50", "avg"),
    "vgg16": ("VGG16", None),
}


def entries(model):
    """Yield (name, NCHW array) in the engine's naming scheme."""
    import keras

    for layer in model.layers:
        for w in layer.weights:
            short = w.name.split("/")[-1].split(":")[0]
            v = np.asarray(w.numpy(), dtype=np.float32)
            if isinstance(layer, keras.layers.SeparableConv2D):
                if short == "depthwise_kernel":  # (kh, kw, C, 1) -> (C, 1, kh, kw)
                    yield f"{layer.name}_depthwise/depthwise_kernel", v.transpose(2, 3, 0, 1)
                elif short == "pointwise_kernel":  # (1, 1, in, out) -> (out, in, 1, 1)
                    yield f"{layer.name}/kernel", v.transpose(3, 2, 0, 1)
                else:
                    yield f"{layer.name}/{short}", v.reshape(1, -1, 1, 1)
            elif isinstance(layer, keras.layers.DepthwiseConv2D):
                yield f"{layer.name}/depthwise_kernel", v.transpose(2, 3, 0, 1)
            elif isinstance(layer, keras.layers.Conv2D):
                if v.ndim == 4:  # (kh, kw, in, out) -> (out, in, kh, kw)
                    yield f"{layer.name}/{short}", v.transpose(3, 2, 0, 1)
                else:
                    yield f"{layer.name}/{short}", v.reshape(1, -1, 1, 1)
            elif isinstance(layer, keras.layers.Dense):
                if v.ndim == 2:
                    yield f"{layer.name}/{short}", v.T.reshape(v.shape[1], v.shape[0], 1, 1)
                else:
                    yield f"{layer.name}/{short}", v.reshape(1, -1, 1, 1)
            else:  # batch norm vectors
                yield f"{layer.name}/{short}", v.reshape(1, -1, 1, 1)


def write_container(path, items):
    items = sorted(items, key=lambda kv: kv[0])
    with open(path, "wb") as f:
        f.write(b"TLBW")
        f.write(struct.pack("<II", 1, len(items)))
        for name, arr in items:
            raw = name.encode()
            shape = list(arr.shape) + [1] * (4 - arr.ndim)
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<4i", *shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--models", default=",".join(MODELS))
    ap.add_argument("--weights", default="imagenet", choices=["imagenet", "none"])
    ap.add_argument("--reference", action="store_true")
    args = ap.parse_args()

    import keras

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for token in args.models.split(","):
        if token not in MODELS:
            print(f"unknown model {token}", file=sys.stderr)
            return 64
        ctor, pooling = MODELS[token]
        keras.backend.clear_session()  # auto-generated layer names restart at conv2d, conv2d_1, ...
        model = getattr(keras.applications, ctor)(
            include_top=False,
            weights=None if args.weights == "none" else "imagenet",
            input_shape=(224, 224, 3),
            pooling=pooling,
        )
        if args.reference and args.weights == "none":
            # identity batch norms would hide mapping mistakes
            rng = np.random.default_rng(1)
            for layer in model.layers:
                if isinstance(layer, keras.layers.BatchNormalization):
                    layer.set_weights([rng.uniform(0.5, 1.5, w.shape).astype(np.float32)
                                       if "variance" in w.name or "gamma" in w.name
                                       else rng.normal(0, 0.1, w.shape).astype(np.float32)
                                       for w in layer.weights])
        items = list(entries(model))
        write_container(args.out_dir / f"{token}.tlbw", items)
        print(f"{token}: {len(items)} tensors, "
              f"{sum(a.size for _, a in items):,} values -> {args.out_dir / (token + '.tlbw')}")
        if args.reference:
            x = np.random.default_rng(0).random((2, 224, 224, 3), dtype=np.float32)
            y = np.asarray(model(x, training=False), dtype=np.float32)
            if y.ndim == 2:
                y = y.reshape(y.shape[0], y.shape[1], 1, 1)
            else:
                y = y.transpose(0, 3, 1, 2)
            with open(args.out_dir / f"{token}.ref.bin", "wb") as f:
                f.write(np.ascontiguousarray(x.transpose(0, 3, 1, 2)).tobytes())
                f.write(np.ascontiguousarray(y).tobytes())
    return 0


if __name__ == "__main__":
    sys.exit(main())
