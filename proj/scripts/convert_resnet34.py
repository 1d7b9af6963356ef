#!/usr/bin/env python3
"""Convert torchvision's ImageNet resnet34 weights into an .hgp checkpoint
holding encoder.* tensors, for use with `hgpose train --pretrained`."""
import argparse
import json
import re
import struct

import numpy as np
import torch
import torchvision


def rename(key):
    key = re.sub(r"^layer(\d)\.", r"resblock\1.", key)
    key = key.replace("downsample.0.", "downsample.conv.").replace("downsample.1.", "downsample.bn.")
    return "encoder." + key


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output .hgp path")
    ap.add_argument("--state-dict", help="local resnet34 state_dict (.pth); downloads torchvision weights otherwise")
    args = ap.parse_args()

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
    else:
        weights = torchvision.models.ResNet34_Weights.IMAGENET1K_V1
        state = torchvision.models.resnet34(weights=weights).state_dict()

    tensors, payload, offset = [], bytearray(), 0
    for key, value in state.items():
        if key.startswith("fc.") or key.endswith("num_batches_tracked"):
            continue
        arr = np.ascontiguousarray(value.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        tensors.append({"name": rename(key), "dtype": "f32", "shape": list(arr.shape),
                        "byte_offset": offset, "byte_length": len(raw)})
        payload += raw
        offset += len(raw)

    header = json.dumps({"format_version": 1, "config": {}, "source": "torchvision resnet34",
                         "tensors": tensors}, separators=(",", ":")).encode()
    with open(args.out, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
    print(f"wrote {len(tensors)} tensors, {offset // 4} values to {args.out}")


if __name__ == "__main__":
    main()
