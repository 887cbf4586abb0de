"""Staggered grid on the periodic strip T^1 x (0,1): fields, operators,
direct elliptic solves, and the binary snapshot format.

MAC layout, arrays indexed [i, k] = (x, z):
  cell centers   (nx, nz)   at ((i+1/2) dx, (k+1/2) dz)
  x-faces        (nx, nz)   at (i dx, (k+1/2) dz), periodic in x
  z-faces        (nx, nz+1) at ((i+1/2) dx, k dz); k = 0 and nz are the walls

Ghost conventions at the z walls: the explicit operators (grad, div,
laplacian) use the reflection ghosts, Dirichlet scalar ghost = 2 g_wall -
g_int and Neumann ghost = g_int; tangential no-slip mirror u_ghost = -u_int;
the wall-normal velocity w is stored exactly zero on the wall faces.  The
implicit Dirichlet solve (helmholtz_solve) upgrades center fields to the
quadratic-extrapolation ghost, whose conservative wall flux is the one-sided
quadratic derivative, while x-face fields keep the mirror convention.

The z solves are direct (Thomas algorithm per x Fourier mode), so runs are
deterministic and bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Staggering",
    "Grid",
    "ScalarField",
    "VectorField",
    "DirichletZ",
    "NeumannZ",
    "mean",
    "grad",
    "div",
    "laplacian",
    "center_to_xface",
    "center_to_zface",
    "xface_to_center",
    "zface_to_center",
    "advect_velocity",
    "poisson_solve",
    "helmholtz_solve",
    "helmholtz_solve_zface",
    "laplace_dirichlet",
    "save_field",
    "load_field",
    "save_profile_csv",
]


class Staggering(IntEnum):
    CENTER = 0
    XFACE = 1
    ZFACE = 2


@dataclass(frozen=True)
class Grid:
    nx: int
    nz: int
    Lx: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.nz < 4:
            raise ShapeError("grid needs nx >= 4 and nz >= 4")
        if self.Lx <= 0:
            raise ShapeError("Lx must be positive")

    @property
    def dx(self):
        return self.Lx / self.nx

    @property
    def dz(self):
        return 1.0 / self.nz

    @property
    def volume(self):
        return self.Lx * 1.0

    @property
    def cell_volume(self):
        return self.dx * self.dz

    @cached_property
    def x_centers(self):
        return (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def z_centers(self):
        return (np.arange(self.nz) + 0.5) * self.dz

    @cached_property
    def x_faces(self):
        return np.arange(self.nx) * self.dx

    @cached_property
    def z_faces(self):
        return np.arange(self.nz + 1) * self.dz

    def shape_of(self, stag):
        if stag == Staggering.ZFACE:
            return (self.nx, self.nz + 1)
        return (self.nx, self.nz)

    def cell_mesh(self):
        return np.meshgrid(self.x_centers, self.z_centers, indexing="ij")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    stag: Staggering = Staggering.CENTER

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape_of(self.stag):
            raise ShapeError(
                f"values shape {self.values.shape} does not match "
                f"{self.stag.name} staggering on {self.grid.nx}x{self.grid.nz}"
            )

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), self.stag)

    @classmethod
    def zeros(cls, grid, stag=Staggering.CENTER):
        return cls(grid, np.zeros(grid.shape_of(stag)), stag)

    @classmethod
    def from_function(cls, grid, fn):
        X, Z = grid.cell_mesh()
        return cls(grid, fn(X, Z), Staggering.CENTER)


@dataclass
class VectorField:
    grid: Grid
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.u.shape != self.grid.shape_of(Staggering.XFACE):
            raise ShapeError(f"u shape {self.u.shape} not x-face staggered")
        if self.w.shape != self.grid.shape_of(Staggering.ZFACE):
            raise ShapeError(f"w shape {self.w.shape} not z-face staggered")

    def copy(self):
        return VectorField(self.grid, self.u.copy(), self.w.copy())

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nx, grid.nz)), np.zeros((grid.nx, grid.nz + 1)))


@dataclass(frozen=True)
class DirichletZ:
    """Dirichlet wall values; scalars or per-x arrays of length nx."""

    bottom: object = 0.0
    top: object = 0.0


@dataclass(frozen=True)
class NeumannZ:
    """Homogeneous Neumann walls."""


def _wall_array(value, nx):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(nx, float(arr))
    if arr.shape != (nx,):
        raise ShapeError(f"wall value shape {arr.shape} incompatible with nx={nx}")
    return arr


def _ghost_pad_z(vals, bc, nx):
    """Return (nx, nz+2) array with ghost rows appended per the z boundary spec."""
    if isinstance(bc, NeumannZ):
        bottom = vals[:, :1]
        top = vals[:, -1:]
    elif isinstance(bc, DirichletZ):
        gb = _wall_array(bc.bottom, nx)
        gt = _wall_array(bc.top, nx)
        bottom = (2.0 * gb)[:, None] - vals[:, :1]
        top = (2.0 * gt)[:, None] - vals[:, -1:]
    else:
        raise ShapeError(f"unsupported z boundary spec {bc!r}")
    return np.concatenate([bottom, vals, top], axis=1)


def mean(f):
    """Volume-weighted average over the domain; exact for constants."""
    if f.stag != Staggering.CENTER:
        raise ShapeError("mean is defined for center-staggered fields")
    return float(np.mean(f.values))


def grad(f, bc=NeumannZ()):
    """Gradient of a center field onto the faces (second-order centered)."""
    if f.stag != Staggering.CENTER:
        raise ShapeError("grad expects a center-staggered field")
    g = f.grid
    vals = f.values
    gx = (vals - np.roll(vals, 1, axis=0)) / g.dx
    gz = np.zeros((g.nx, g.nz + 1))
    gz[:, 1:-1] = (vals[:, 1:] - vals[:, :-1]) / g.dz
    if isinstance(bc, DirichletZ):
        gb = _wall_array(bc.bottom, g.nx)
        gt = _wall_array(bc.top, g.nx)
        gz[:, 0] = 2.0 * (vals[:, 0] - gb) / g.dz
        gz[:, -1] = 2.0 * (gt - vals[:, -1]) / g.dz
    elif isinstance(bc, NeumannZ):
        pass
    else:
        raise ShapeError(f"unsupported z boundary spec {bc!r}")
    return VectorField(g, gx, gz)


def div(v):
    """Divergence of a face vector field onto cell centers."""
    g = v.grid
    dudx = (np.roll(v.u, -1, axis=0) - v.u) / g.dx
    dwdz = (v.w[:, 1:] - v.w[:, :-1]) / g.dz
    return ScalarField(g, dudx + dwdz, Staggering.CENTER)


def laplacian(f, bc):
    """Five-point Laplacian of a center field; periodic x, ghost cells in z."""
    if f.stag != Staggering.CENTER:
        raise ShapeError("laplacian expects a center-staggered field")
    g = f.grid
    vals = f.values
    padded = _ghost_pad_z(vals, bc, g.nx)
    d2x = (np.roll(vals, -1, axis=0) - 2.0 * vals + np.roll(vals, 1, axis=0)) / g.dx ** 2
    d2z = (padded[:, 2:] - 2.0 * padded[:, 1:-1] + padded[:, :-2]) / g.dz ** 2
    return ScalarField(g, d2x + d2z, Staggering.CENTER)


def center_to_xface(vals):
    """Average center values onto x-faces (periodic)."""
    return 0.5 * (vals + np.roll(vals, 1, axis=0))


def center_to_zface(vals, bottom=None, top=None):
    """Average center values onto z-faces; wall faces take the given values
    or a second-order one-sided extrapolation."""
    nx, nz = vals.shape
    out = np.zeros((nx, nz + 1))
    out[:, 1:-1] = 0.5 * (vals[:, 1:] + vals[:, :-1])
    out[:, 0] = _wall_array(bottom, nx) if bottom is not None else 1.5 * vals[:, 0] - 0.5 * vals[:, 1]
    out[:, -1] = _wall_array(top, nx) if top is not None else 1.5 * vals[:, -1] - 0.5 * vals[:, -2]
    return out


def xface_to_center(u):
    return 0.5 * (u + np.roll(u, -1, axis=0))


def zface_to_center(w):
    return 0.5 * (w[:, 1:] + w[:, :-1])


def _pad_mirror_z(u):
    """Tangential no-slip ghosts: u_ghost = -u_interior."""
    return np.concatenate([-u[:, :1], u, -u[:, -1:]], axis=1)


def advect_velocity(grid, u, w):
    """-(U . grad) U at the faces, centered second order.

    u is x-face staggered, w z-face staggered; tangential ghosts are no-slip
    mirrors and the wall rows of the w component stay zero.
    """
    dx, dz = grid.dx, grid.dz
    dudx = (np.roll(u, -1, axis=0) - np.roll(u, 1, axis=0)) / (2 * dx)
    up = _pad_mirror_z(u)
    dudz = (up[:, 2:] - up[:, :-2]) / (2 * dz)
    wl = np.roll(w, 1, axis=0)
    # x-neighbor pairs are summed first so mirroring the data in x commutes
    # with the stencil bit for bit (pair sums only ever swap operands).
    w_at_x = 0.25 * ((w[:, :-1] + wl[:, :-1]) + (w[:, 1:] + wl[:, 1:]))
    adv_u = -(u * dudx + w_at_x * dudz)

    dwdx = (np.roll(w, -1, axis=0) - np.roll(w, 1, axis=0)) / (2 * dx)
    adv_w = np.zeros_like(w)
    ur = np.roll(u, -1, axis=0)
    u_at_z = 0.25 * ((u[:, :-1] + ur[:, :-1]) + (u[:, 1:] + ur[:, 1:]))
    dwdz = (w[:, 2:] - w[:, :-2]) / (2 * dz)
    adv_w[:, 1:-1] = -(u_at_z * dwdx[:, 1:-1] + w[:, 1:-1] * dwdz)
    return adv_u, adv_w


def _thomas(sub, diag, sup, rhs):
    """Batched Thomas solve along the last axis; leading axes broadcast.

    sub[..., 0] and sup[..., -1] are ignored.
    """
    n = rhs.shape[-1]
    dtype = np.result_type(diag, rhs)
    cp = np.empty(np.broadcast_shapes(diag.shape, rhs.shape), dtype=dtype)
    xp = np.empty_like(cp)
    beta = diag[..., 0]
    cp[..., 0] = sup[..., 0] / beta
    xp[..., 0] = rhs[..., 0] / beta
    for k in range(1, n):
        beta = diag[..., k] - sub[..., k] * cp[..., k - 1]
        cp[..., k] = sup[..., k] / beta
        xp[..., k] = (rhs[..., k] - sub[..., k] * xp[..., k - 1]) / beta
    x = np.empty_like(cp)
    x[..., -1] = xp[..., -1]
    for k in range(n - 2, -1, -1):
        x[..., k] = xp[..., k] - cp[..., k] * x[..., k + 1]
    return x


def _x_mode_eigenvalues(grid):
    """Discrete symbols k~^2 >= 0 of -d^2/dx^2 for the rfft modes."""
    j = np.arange(grid.nx // 2 + 1)
    return 2.0 * (1.0 - np.cos(2.0 * np.pi * j / grid.nx)) / grid.dx ** 2


def poisson_solve(rhs):
    """Solve lap(phi) = rhs - mean(rhs) with periodic x, homogeneous Neumann z.

    Returns (phi, removed_mean); phi has zero mean.  Direct method: rfft in x,
    Thomas solve in z per mode; the singular constant mode is pinned and the
    mean subtracted afterwards.
    """
    if rhs.stag != Staggering.CENTER:
        raise ShapeError("poisson_solve expects a center-staggered field")
    if not np.all(np.isfinite(rhs.values)):
        raise DomainError("non-finite right-hand side")
    g = rhs.grid
    removed = mean(rhs)
    r = rhs.values - removed
    rhat = np.fft.rfft(r, axis=0)
    kx2 = _x_mode_eigenvalues(g)[:, None]
    inv_dz2 = 1.0 / g.dz ** 2
    nm = rhat.shape[0]
    diag = np.full((nm, g.nz), -2.0 * inv_dz2) - kx2
    sub = np.full((nm, g.nz), inv_dz2)
    sup = np.full((nm, g.nz), inv_dz2)
    # Neumann ghosts fold the wall neighbor back onto the diagonal.
    diag[:, 0] += inv_dz2
    diag[:, -1] += inv_dz2
    # kx = 0 is singular (Neumann): pin phi[0, 0] = 0, fix the mean afterwards.
    diag[0, 0] = 1.0
    sup[0, 0] = 0.0
    rhat[0, 0] = 0.0
    sub[0, 1] = 0.0
    phihat = _thomas(sub, diag, sup, rhat)
    phi = np.fft.irfft(phihat, n=g.nx, axis=0)
    phi -= np.mean(phi)
    return ScalarField(g, phi, Staggering.CENTER), removed


def _helmholtz_rows(grid, c, nm):
    kx2 = _x_mode_eigenvalues(grid)[:, None]
    inv_dz2 = 1.0 / grid.dz ** 2
    diag = 1.0 + c * (2.0 * inv_dz2 + kx2) * np.ones((nm, grid.nz))
    sub = np.full((nm, grid.nz), -c * inv_dz2)
    sup = np.full((nm, grid.nz), -c * inv_dz2)
    return diag, sub, sup, inv_dz2


def _helmholtz_center_values(grid, f_vals, c, bottom, top, wall="extrapolate"):
    fhat = np.fft.rfft(f_vals, axis=0)
    nm = fhat.shape[0]
    diag, sub, sup, inv_dz2 = _helmholtz_rows(grid, c, nm)
    bhat = np.fft.rfft(_wall_array(bottom, grid.nx))
    that = np.fft.rfft(_wall_array(top, grid.nx))
    rhs = fhat.copy()
    if wall == "mirror":
        # ghost 2g - f0: first order at the wall cell, used for tangential
        # velocity where the no-slip mirror convention is wanted.
        diag[:, 0] += c * inv_dz2
        diag[:, -1] += c * inv_dz2
        rhs[:, 0] += 2.0 * c * inv_dz2 * bhat
        rhs[:, -1] += 2.0 * c * inv_dz2 * that
    else:
        # quadratic extrapolation ghost (8g - 6 f0 + f1)/3: second order at
        # the wall cell, and the scheme's conservative wall flux equals the
        # one-sided quadratic derivative through (g, f0, f1) exactly.
        diag[:, 0] += 2.0 * c * inv_dz2
        diag[:, -1] += 2.0 * c * inv_dz2
        sup[:, 0] -= c * inv_dz2 / 3.0
        sub[:, -1] -= c * inv_dz2 / 3.0
        rhs[:, 0] += (8.0 / 3.0) * c * inv_dz2 * bhat
        rhs[:, -1] += (8.0 / 3.0) * c * inv_dz2 * that
    ghat = _thomas(sub, diag, sup, rhs)
    return np.fft.irfft(ghat, n=grid.nx, axis=0)


def helmholtz_solve(f, c, bc=DirichletZ(0.0, 0.0)):
    """Solve (I - c lap) g = f with periodic x and Dirichlet z walls.

    Center fields use the quadratic-extrapolation wall ghost; x-face fields
    (tangential velocity at the same z heights) use the mirror ghost.
    """
    if c <= 0:
        raise DomainError("helmholtz_solve needs c > 0")
    if f.stag == Staggering.ZFACE:
        raise ShapeError("use helmholtz_solve_zface for z-face fields")
    if not isinstance(bc, DirichletZ):
        raise ShapeError("helmholtz_solve supports Dirichlet z walls")
    wall = "mirror" if f.stag == Staggering.XFACE else "extrapolate"
    vals = _helmholtz_center_values(f.grid, f.values, c, bc.bottom, bc.top, wall)
    return ScalarField(f.grid, vals, f.stag)


def helmholtz_solve_zface(f, c):
    """Solve (I - c lap) w = f on interior z-faces with w = 0 on the walls.

    f is z-face staggered; its wall rows are ignored.  Returns a z-face field
    with exactly zero wall rows.
    """
    if c <= 0:
        raise DomainError("helmholtz_solve_zface needs c > 0")
    if f.stag != Staggering.ZFACE:
        raise ShapeError("helmholtz_solve_zface expects a z-face field")
    g = f.grid
    interior = f.values[:, 1:-1]
    fhat = np.fft.rfft(interior, axis=0)
    nm = fhat.shape[0]
    kx2 = _x_mode_eigenvalues(g)[:, None]
    inv_dz2 = 1.0 / g.dz ** 2
    nzi = g.nz - 1
    diag = 1.0 + c * (2.0 * inv_dz2 + kx2) * np.ones((nm, nzi))
    sub = np.full((nm, nzi), -c * inv_dz2)
    sup = np.full((nm, nzi), -c * inv_dz2)
    what = _thomas(sub, diag, sup, fhat)
    out = np.zeros((g.nx, g.nz + 1))
    out[:, 1:-1] = np.fft.irfft(what, n=g.nx, axis=0)
    return ScalarField(g, out, Staggering.ZFACE)


def laplace_dirichlet(grid, bottom, top):
    """Harmonic extension of wall data: lap(h) = 0, h = bottom/top on the walls.

    Uses the quadratic-extrapolation wall ghost, matching helmholtz_solve on
    center fields.  For per-wall-constant data the result is the linear blend
    bottom + (top - bottom) z sampled at the cell centers.
    """
    nm = grid.nx // 2 + 1
    kx2 = _x_mode_eigenvalues(grid)[:, None]
    inv_dz2 = 1.0 / grid.dz ** 2
    diag = (2.0 * inv_dz2 + kx2) * np.ones((nm, grid.nz))
    sub = np.full((nm, grid.nz), -inv_dz2)
    sup = np.full((nm, grid.nz), -inv_dz2)
    bhat = np.fft.rfft(_wall_array(bottom, grid.nx))
    that = np.fft.rfft(_wall_array(top, grid.nx))
    rhs = np.zeros((nm, grid.nz), dtype=complex)
    diag[:, 0] += 2.0 * inv_dz2
    diag[:, -1] += 2.0 * inv_dz2
    sup[:, 0] -= inv_dz2 / 3.0
    sub[:, -1] -= inv_dz2 / 3.0
    rhs[:, 0] += (8.0 / 3.0) * inv_dz2 * bhat
    rhs[:, -1] += (8.0 / 3.0) * inv_dz2 * that
    hhat = _thomas(sub, diag, sup, rhs)
    return ScalarField(grid, np.fft.irfft(hhat, n=grid.nx, axis=0), Staggering.CENTER)


_MAGIC = b"BLLF"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIB")


def save_field(path, field):
    """Write a field snapshot: magic 'BLLF', u32 version, u32 nx, u32 nz,
    u8 staggering, then row-major little-endian float64 values.

    Vector components are written as two snapshots with x-face / z-face tags.
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, field.grid.nx, field.grid.nz, int(field.stag)))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path, grid=None):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, version, nx, nz, stag = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise DomainError(f"{path}: unsupported version {version}")
        stag = Staggering(stag)
        if grid is None:
            grid = Grid(nx, nz)
        elif (grid.nx, grid.nz) != (nx, nz):
            raise ShapeError(f"{path}: grid {nx}x{nz} does not match {grid.nx}x{grid.nz}")
        shape = grid.shape_of(stag)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return ScalarField(grid, data.copy(), stag)


def save_profile_csv(path, columns, header):
    """Write 1D profiles as CSV: header row, then one row per sample."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = len(cols[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(format(c[i], ".17g") for c in cols) + "\n")
