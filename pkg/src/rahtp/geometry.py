"""Point-cloud ingestion, voxelization, and the level-of-detail node hierarchy.

Levels are indexed ell = 0..L.  Level L holds one node per occupied voxel;
coarser levels are derived by the recursive child-closure rule: n is a node at
level ell iff some node m at level ell+1 satisfies m - 2n in stencil(p).
Nodes at every level are kept in Morton (Z-order), which fixes the canonical
coefficient order everywhere downstream.
"""

from dataclasses import dataclass, field

import numpy as np

# displacement table shared by the Gram stencil and neighbor indexing:
# 27 offsets in {-1,0,1}^3, slot index = (dx+1)*9 + (dy+1)*3 + (dz+1)
NBR_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)
CENTER_SLOT = 13


def morton_key(coords, bits):
    """Interleave bits of (x,y,z) into a single uint64 Z-order key.

    Bit i of x lands at position 3i, y at 3i+1, z at 3i+2.
    """
    coords = np.asarray(coords, dtype=np.uint64)
    if coords.ndim == 1:
        coords = coords[None, :]
    if bits * 3 > 63:
        raise ValueError("morton key overflow: bits=%d" % bits)
    key = np.zeros(len(coords), dtype=np.uint64)
    for i in range(bits):
        for ax in range(3):
            key |= ((coords[:, ax] >> np.uint64(i)) & np.uint64(1)) << np.uint64(3 * i + ax)
    return key


def morton_sort(coords, bits):
    """Return (sorted coords, permutation) in increasing Morton order."""
    key = morton_key(coords, bits)
    order = np.argsort(key, kind="stable")
    return coords[order], order


@dataclass
class PointCloud:
    positions: np.ndarray  # (N,3) int64 voxel coords in [0, 2^L)^3
    attributes: np.ndarray  # (N,r) float64
    depth: int
    channels: int

    def validate(self):
        if len(self.positions) != len(self.attributes):
            raise ValueError("positions/attributes length mismatch")
        if len(self.positions) == 0:
            raise ValueError("empty point cloud")
        if self.positions.min() < 0 or self.positions.max() >= 2 ** self.depth:
            raise ValueError("positions outside [0, 2^L)^3")
        if not np.isfinite(self.attributes).all():
            raise ValueError("non-finite attributes")


@dataclass
class LevelGeometry:
    level: int
    nodes: np.ndarray        # (N,3) int64, Morton-sorted
    # flat parent->child link arrays (one row per (parent, child, d) triple)
    link_parent: np.ndarray = field(default=None)  # (E,) int64 indices into this level
    link_child: np.ndarray = field(default=None)   # (E,) int64 indices into level+1
    link_d: np.ndarray = field(default=None)       # (E,3) int64, d = m - 2n
    neighbor_index: np.ndarray = field(default=None)  # (N,27) int64, -1 where absent

    def __len__(self):
        return len(self.nodes)


@dataclass
class Hierarchy:
    levels: list
    order: int
    depth: int

    @property
    def num_points(self):
        return len(self.levels[self.depth])


def _read_ply_header(fh):
    line = fh.readline()
    if line.strip() != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_code)])
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("malformed PLY header: missing end_header")
        tok = line.decode("ascii", "replace").split()
        if not tok:
            continue
        if tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], "list:" + tok[2] + ":" + tok[3]))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError("unsupported PLY format: %r" % fmt)
    return fmt, elements


_PLY_DTYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_ply(path):
    """Read a PLY point cloud (ASCII or binary little-endian).

    Requires vertex properties x,y,z; colors red,green,blue or a single
    scalar property (gray/intensity/value/scalar) become the attributes.
    Positions are returned raw (not voxelized), attributes as float64.
    """
    with open(path, "rb") as fh:
        fmt, elements = _read_ply_header(fh)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise ValueError("PLY has no vertex element")
        _, count, props = vertex
        if count == 0:
            raise ValueError("empty point cloud")
        names = [p[0] for p in props]
        if any(t.startswith("list:") for _, t in props):
            raise ValueError("list properties in vertex element are unsupported")
        if not all(c in names for c in ("x", "y", "z")):
            raise ValueError("PLY vertex element lacks x,y,z")
        dtype = np.dtype([(n, "<" + _PLY_DTYPES[t]) for n, t in props])
        if fmt == "binary_little_endian":
            raw = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype, count=count)
        else:
            rows = []
            while len(rows) < count:
                line = fh.readline()
                if not line:
                    raise ValueError("truncated ASCII PLY body")
                s = line.split()
                if s:
                    rows.append(tuple(s[: len(props)]))
            raw = np.array([tuple(float(v) for v in row) for row in rows], dtype=dtype)
        pos = np.stack([raw["x"], raw["y"], raw["z"]], axis=1).astype(np.float64)
        if not np.isfinite(pos).all():
            raise ValueError("non-finite coordinates")
        if all(c in names for c in ("red", "green", "blue")):
            attrs = np.stack([raw["red"], raw["green"], raw["blue"]], axis=1).astype(np.float64)
        else:
            scalar = next((n for n in ("gray", "intensity", "value", "scalar") if n in names), None)
            if scalar is None:
                raise ValueError("PLY vertex element lacks red,green,blue or a scalar attribute")
            attrs = raw[scalar].astype(np.float64)[:, None]
    # depth filled in by voxelize
    return PointCloud(positions=pos, attributes=attrs, depth=0, channels=attrs.shape[1])


def save_ply(path, positions, attributes):
    """Write a binary little-endian PLY with float32 attribute channels."""
    positions = np.asarray(positions)
    attributes = np.atleast_2d(np.asarray(attributes, dtype=np.float64))
    if attributes.shape[0] != positions.shape[0]:
        attributes = attributes.T
    r = attributes.shape[1]
    names = ["red", "green", "blue"] if r == 3 else ["value"] if r == 1 else [
        "c%d" % i for i in range(r)]
    header = ["ply", "format binary_little_endian 1.0",
              "element vertex %d" % len(positions)]
    header += ["property float x", "property float y", "property float z"]
    header += ["property float %s" % n for n in names]
    header += ["end_header", ""]
    dtype = np.dtype([(n, "<f4") for n in ("x", "y", "z", *names)])
    rec = np.empty(len(positions), dtype=dtype)
    rec["x"], rec["y"], rec["z"] = (positions[:, i].astype(np.float32) for i in range(3))
    for i, n in enumerate(names):
        rec[n] = attributes[:, i].astype(np.float32)
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(rec.tobytes())


def voxelize(cloud, depth):
    """Quantize positions onto the integer grid [0, 2^L)^3 and merge duplicates.

    Integer positions already inside the grid pass through unchanged;
    otherwise positions are min-corner shifted, uniformly scaled, and floored.
    Attributes of points landing in the same voxel are averaged.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pos = np.asarray(cloud.positions, dtype=np.float64)
    size = 2 ** depth
    if np.all(pos == np.floor(pos)) and pos.min() >= 0 and pos.max() < size:
        vox = pos.astype(np.int64)
    else:
        lo = pos.min(axis=0)
        extent = float((pos - lo).max())
        scale = 1.0 if extent == 0.0 else size * (1.0 - 1e-9) / extent
        vox = np.floor((pos - lo) * scale).astype(np.int64)
        np.clip(vox, 0, size - 1, out=vox)
    key = morton_key(vox, depth)
    uniq, inverse = np.unique(key, return_inverse=True)
    n = len(uniq)
    attrs = np.zeros((n, cloud.attributes.shape[1]), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    np.add.at(attrs, inverse, cloud.attributes)
    np.add.at(counts, inverse, 1)
    attrs /= counts[:, None]
    # decode voxel coords back from the sorted unique keys
    out_pos = np.zeros((n, 3), dtype=np.int64)
    for i in range(depth):
        for ax in range(3):
            out_pos[:, ax] |= ((uniq >> np.uint64(3 * i + ax)) & np.uint64(1)).astype(np.int64) << i
    out = PointCloud(positions=out_pos, attributes=attrs, depth=depth,
                     channels=cloud.attributes.shape[1])
    out.validate()
    return out


def _parents_per_axis(c, order):
    """Per-axis candidate parent coords (lo, hi); lo==hi when only one exists."""
    if order == 1:
        lo = c >> 1
        return lo, lo
    odd = c & 1
    return (c - odd) >> 1, (c + odd) >> 1


def _parent_set(child_nodes, order):
    """All parent coords reachable from child_nodes under stencil(order)."""
    lo = np.empty_like(child_nodes)
    hi = np.empty_like(child_nodes)
    for ax in range(3):
        lo[:, ax], hi[:, ax] = _parents_per_axis(child_nodes[:, ax], order)
    if order == 1:
        return np.unique(lo, axis=0)
    cands = []
    for sx in (0, 1):
        for sy in (0, 1):
            for sz in (0, 1):
                pick = np.stack([
                    hi[:, 0] if sx else lo[:, 0],
                    hi[:, 1] if sy else lo[:, 1],
                    hi[:, 2] if sz else lo[:, 2],
                ], axis=1)
                cands.append(pick)
    return np.unique(np.concatenate(cands, axis=0), axis=0)


def _stencil_offsets(order):
    if order == 1:
        return np.array([(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
                        dtype=np.int64)
    return NBR_OFFSETS.copy()


def _build_links(parent_nodes, child_nodes, order, bits):
    """Flat (parent, child, d) triples with d = m - 2n in stencil(order)."""
    pkeys = morton_key(parent_nodes, bits)
    parents, children, dvecs = [], [], []
    for d in _stencil_offsets(order):
        cand = child_nodes - d[None, :]
        valid = np.all(cand % 2 == 0, axis=1)
        cand = cand >> 1
        valid &= np.all(cand >= 0, axis=1)
        idx_child = np.nonzero(valid)[0]
        if len(idx_child) == 0:
            continue
        ckeys = morton_key(cand[idx_child], bits)
        pos = np.searchsorted(pkeys, ckeys)
        pos = np.clip(pos, 0, len(pkeys) - 1)
        hit = pkeys[pos] == ckeys
        idx_child = idx_child[hit]
        if len(idx_child) == 0:
            continue
        parents.append(pos[hit])
        children.append(idx_child)
        dvecs.append(np.broadcast_to(d, (len(idx_child), 3)))
    parent = np.concatenate(parents)
    child = np.concatenate(children)
    dvec = np.concatenate(dvecs).astype(np.int64)
    # canonical order: by parent, then child (both already Morton-ranked indices)
    order_ix = np.lexsort((child, parent))
    return parent[order_ix], child[order_ix], dvec[order_ix]


def _build_neighbor_index(nodes, bits):
    keys = morton_key(nodes, bits)
    n = len(nodes)
    out = np.full((n, 27), -1, dtype=np.int64)
    for slot, d in enumerate(NBR_OFFSETS):
        cand = nodes + d[None, :]
        valid = np.all(cand >= 0, axis=1)
        ckeys = morton_key(np.where(valid[:, None], cand, 0), bits)
        pos = np.searchsorted(keys, ckeys)
        pos = np.clip(pos, 0, n - 1)
        hit = valid & (keys[pos] == ckeys)
        out[hit, slot] = pos[hit]
    return out


def build_hierarchy(cloud, order):
    """Build the level-of-detail hierarchy for a voxelized cloud.

    Constructs N_L from the voxel positions, each coarser N_ell by the
    child-closure rule, all parent-child links with their stencil offsets,
    and the 27-neighborhood index at every level.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    cloud.validate()
    L = cloud.depth
    nodes, _ = morton_sort(cloud.positions.astype(np.int64), L + 1)
    if not np.array_equal(nodes, cloud.positions):
        raise ValueError("cloud positions must be Morton-sorted (voxelize does this)")
    levels = [None] * (L + 1)
    levels[L] = LevelGeometry(level=L, nodes=nodes)
    for ell in range(L - 1, -1, -1):
        parents = _parent_set(levels[ell + 1].nodes, order)
        parents, _ = morton_sort(parents, ell + 2)
        levels[ell] = LevelGeometry(level=ell, nodes=parents)
    for ell in range(L):
        lp, lc, ld = _build_links(levels[ell].nodes, levels[ell + 1].nodes, order, ell + 2)
        levels[ell].link_parent, levels[ell].link_child, levels[ell].link_d = lp, lc, ld
    for ell in range(L + 1):
        levels[ell].neighbor_index = _build_neighbor_index(levels[ell].nodes, ell + 2)
    return Hierarchy(levels=levels, order=order, depth=L)


def geometry_digest(positions, depth):
    """64-bit digest of the voxel set; ties bitstreams to their geometry."""
    import hashlib

    keys = np.sort(morton_key(np.asarray(positions, dtype=np.int64), depth))
    h = hashlib.blake2b(digest_size=8)
    h.update(np.uint64([depth]).tobytes())
    h.update(keys.tobytes())
    return int.from_bytes(h.digest(), "little")
