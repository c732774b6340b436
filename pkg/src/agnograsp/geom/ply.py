"""Binary little-endian PLY point clouds with arbitrary scalar properties."""

import numpy as np

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int": "<i4", "int32": "<i4",
    "uint": "<u4", "short": "<i2", "ushort": "<u2",
}
_NP_TO_PLY = {"<f4": "float", "<f8": "double", "|u1": "uchar", "|i1": "char",
              "<i4": "int", "<u4": "uint", "<i2": "short", "<u2": "ushort"}


def write_ply(path, fields):
    """Write ``fields`` (name -> 1-D array, equal lengths) as vertex properties.

    Property order follows the mapping order; dtypes are preserved.
    """
    names = list(fields)
    n = len(fields[names[0]]) if names else 0
    dtype = []
    for name in names:
        arr = np.asarray(fields[name])
        if len(arr) != n:
            raise ValueError("all PLY fields need the same length")
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        dtype.append((name, dt.str if dt.str in _NP_TO_PLY else "<f4"))
    rec = np.empty(n, dtype=dtype)
    for name in names:
        rec[name] = fields[name]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {_NP_TO_PLY[rec.dtype[name].str]} {name}" for name in names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = fh.readline().decode().split()
        if fmt[1] != "binary_little_endian":
            raise ValueError(f"{path}: only binary_little_endian PLY is supported")
        n, props = 0, []
        while True:
            line = fh.readline().decode().strip()
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "element":
                n = int(parts[2])
            elif parts[0] == "property":
                props.append((parts[2], _PLY_TYPES[parts[1]]))
        rec = np.frombuffer(fh.read(), dtype=props, count=n)
    return {name: rec[name].copy() for name, _ in props}


def write_cloud(path, points, flags):
    points = np.asarray(points)
    write_ply(path, {"x": points[:, 0].astype("<f4"), "y": points[:, 1].astype("<f4"),
                     "z": points[:, 2].astype("<f4"),
                     "flag": np.asarray(flags).astype("u1")})


def read_cloud(path):
    d = read_ply(path)
    return np.stack([d["x"], d["y"], d["z"]], axis=1).astype(float), d["flag"].astype(bool)
