"""Text formats for tensor inputs and field outputs.

TENSORFIELD2D (input):
    line 1:  TENSORFIELD2D nx ny x0 y0 dx dy
    then nx*ny lines, row-major with y as the outer index, each carrying
    the six independent entries  Dxx Dxy Dxz Dyy Dyz Dzz.

FIELD2D (output / comparison):
    line 1:  FIELD2D <name> nx ny x0 y0 dx dy t
    then nx*ny values, row-major (y outer), one per line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .tissue import WaterTensorField


class FileFormatError(ValueError):
    pass


def _parse_header(tokens, kinds, path, what):
    if len(tokens) != len(kinds):
        raise FileFormatError(
            f"{path}:1: {what} header needs {len(kinds)} fields, got {len(tokens)}"
        )
    out = []
    for tok, kind in zip(tokens, kinds):
        try:
            out.append(kind(tok))
        except ValueError as err:
            raise FileFormatError(f"{path}:1: bad header token {tok!r}") from err
    return out


def read_tensor_field(path) -> WaterTensorField:
    path = str(path)
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}:1: empty file")
    head = lines[0].split()
    if not head or head[0] != "TENSORFIELD2D":
        raise FileFormatError(f"{path}:1: expected TENSORFIELD2D header")
    nx, ny, x0, y0, dx, dy = _parse_header(
        head[1:], [int, int, float, float, float, float], path, "TENSORFIELD2D"
    )
    grid = GridSpec(nx=nx, ny=ny, x0=x0, y0=y0, dx=dx, dy=dy)
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != nx * ny:
        raise FileFormatError(
            f"{path}: expected {nx * ny} tensor lines, found {len(body)}"
        )
    tensors = np.empty((ny, nx, 3, 3))
    for k, ln in enumerate(body):
        toks = ln.split()
        if len(toks) != 6:
            raise FileFormatError(
                f"{path}:{k + 2}: expected 6 tensor entries, got {len(toks)}"
            )
        try:
            dxx, dxy, dxz, dyy, dyz, dzz = (float(t) for t in toks)
        except ValueError as err:
            raise FileFormatError(f"{path}:{k + 2}: non-numeric tensor entry") from err
        iy, ix = divmod(k, nx)
        tensors[iy, ix] = [[dxx, dxy, dxz], [dxy, dyy, dyz], [dxz, dyz, dzz]]
    field = WaterTensorField(grid=grid, tensors=tensors)
    field.validate()
    return field


def write_tensor_field(path, field: WaterTensorField) -> None:
    g = field.grid
    with open(str(path), "w") as fh:
        fh.write(f"TENSORFIELD2D {g.nx} {g.ny} {g.x0!r} {g.y0!r} {g.dx!r} {g.dy!r}\n")
        for iy in range(g.ny):
            for ix in range(g.nx):
                t = field.tensors[iy, ix]
                entries = (t[0, 0], t[0, 1], t[0, 2], t[1, 1], t[1, 2], t[2, 2])
                fh.write(" ".join(repr(float(v)) for v in entries) + "\n")


@dataclass
class Field2D:
    name: str
    grid: GridSpec
    time: float
    values: np.ndarray  # (ny, nx)


def read_field(path) -> Field2D:
    path = str(path)
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}:1: empty file")
    head = lines[0].split()
    if not head or head[0] != "FIELD2D":
        raise FileFormatError(f"{path}:1: expected FIELD2D header")
    if len(head) < 2:
        raise FileFormatError(f"{path}:1: FIELD2D header missing field name")
    name = head[1]
    nx, ny, x0, y0, dx, dy, t = _parse_header(
        head[2:], [int, int, float, float, float, float, float], path, "FIELD2D"
    )
    grid = GridSpec(nx=nx, ny=ny, x0=x0, y0=y0, dx=dx, dy=dy)
    toks = []
    for k, ln in enumerate(lines[1:]):
        for tok in ln.split():
            try:
                toks.append(float(tok))
            except ValueError as err:
                raise FileFormatError(f"{path}:{k + 2}: non-numeric value {tok!r}") from err
    if len(toks) != nx * ny:
        raise FileFormatError(f"{path}: expected {nx * ny} values, found {len(toks)}")
    values = np.asarray(toks).reshape(ny, nx)
    return Field2D(name=name, grid=grid, time=t, values=values)


def write_field(path, field: Field2D) -> None:
    g = field.grid
    vals = np.asarray(field.values)
    if vals.shape != (g.ny, g.nx):
        raise FileFormatError(f"field shape {vals.shape} does not match grid")
    with open(str(path), "w") as fh:
        fh.write(
            f"FIELD2D {field.name} {g.nx} {g.ny} "
            f"{g.x0!r} {g.y0!r} {g.dx!r} {g.dy!r} {float(field.time)!r}\n"
        )
        for v in vals.reshape(-1):
            fh.write(f"{float(v)!r}\n")
