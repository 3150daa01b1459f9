#!/usr/bin/env python3
"""Convert the pickled citation-network files into the .grc container.

Expects the eight ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index} files
in --src and writes <root>/<name>/<name>.grc plus the JSON sidecar.
"""

import argparse
import json
import pickle
import struct
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def load_parts(src, name):
    parts = {}
    for ext in ["x", "y", "tx", "ty", "allx", "ally", "graph"]:
        parts[ext] = load_pickle(src / f"ind.{name}.{ext}")
    test_index = np.loadtxt(src / f"ind.{name}.test.index", dtype=int)
    return parts, test_index


def assemble(parts, test_index):
    allx, ally = parts["allx"], parts["ally"]
    tx, ty = parts["tx"], parts["ty"]

    # The test rows are stored in shuffled order and may leave index gaps
    # (isolated unlabeled nodes); scatter them into position.
    lo, hi = test_index.min(), test_index.max()
    full_tx = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
    full_ty = np.zeros((hi - lo + 1, ty.shape[1]))
    full_tx[test_index - lo] = tx
    full_ty[test_index - lo] = ty

    x = sp.vstack([allx, full_tx]).tocsr()
    y_onehot = np.vstack([ally.toarray() if sp.issparse(ally) else ally, full_ty])
    labels = np.where(y_onehot.sum(axis=1) > 0, y_onehot.argmax(axis=1), -1).astype(np.int32)

    n = x.shape[0]
    edges = set()
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if u == v or u >= n or v >= n:
                continue
            edges.add((min(u, v), max(u, v)))
    return x, labels, sorted(edges), y_onehot.shape[1]


def write_container(path, x, labels, edges, num_classes):
    x = x.tocsr()
    x.sum_duplicates()
    n, d = x.shape
    with open(path, "wb") as f:
        f.write(b"GRC1")
        f.write(struct.pack("<4Q", n, len(edges), d, num_classes))
        f.write(struct.pack("<I", 1))  # CSR features
        for u, v in edges:
            f.write(struct.pack("<2I", u, v))
        f.write(labels.astype("<i4").tobytes())
        f.write(struct.pack("<Q", x.nnz))
        f.write(x.indptr.astype("<u8").tobytes())
        f.write(x.indices.astype("<u4").tobytes())
        f.write(x.data.astype("<f8").tobytes())


def fnv1a64(path):
    h = 0xCBF29CE484222325
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            for b in chunk:
                h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--src", required=True, type=Path)
    ap.add_argument("--name", required=True)
    ap.add_argument("--root", required=True, type=Path)
    args = ap.parse_args()

    parts, test_index = load_parts(args.src, args.name)
    x, labels, edges, num_classes = assemble(parts, test_index)

    out_dir = args.root / args.name
    out_dir.mkdir(parents=True, exist_ok=True)
    container = out_dir / f"{args.name}.grc"
    write_container(container, x, labels, edges, num_classes)

    sidecar = {
        "name": args.name,
        "num_nodes": int(x.shape[0]),
        "num_edges": len(edges),
        "feature_dim": int(x.shape[1]),
        "num_classes": int(num_classes),
        "checksum_fnv1a64": fnv1a64(container),
    }
    (out_dir / f"{args.name}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"{args.name}: n={x.shape[0]} m={len(edges)} d={x.shape[1]} c={num_classes} "
          f"unlabeled={(labels < 0).sum()}")


if __name__ == "__main__":
    sys.exit(main())
