#!/usr/bin/env python3
"""Print the tensor shape at every stage of one forward pass."""
import argparse

import numpy as np

from mscnet.engine import Tensor, default_dtype, no_grad
from mscnet.model import MSCNet, ModelConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=float, default=1.0)
    ap.add_argument("--size", type=int, default=224)
    args = ap.parse_args()
    with default_dtype(np.float32), no_grad():
        m = MSCNet(ModelConfig(alpha=args.width, input_size=args.size)).eval()
        x = Tensor(np.zeros((1, 3, args.size, args.size)))
        enc, dec = m.features(x)
        for i, f in enumerate(enc.as_list(), 1):
            print(f"encoder block{i}: {f.shape}  stride {args.size // f.shape[2]}")
        for i, d in enumerate(dec.as_list(), 1):
            print(f"decoder D{i}:     {d.shape}")
        for r, row in enumerate(m.apfa.pyramid(dec.as_list()).rows):
            print(f"pyramid row {r}:  {[t.shape[2] for t in row]}")
        print(f"output:         {m(x).shape}")


if __name__ == "__main__":
    main()
