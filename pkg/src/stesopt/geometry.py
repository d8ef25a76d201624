"""Storage and ground geometry, and the lumped thermal network derived from it.

The pit is a truncated pyramid with square faces, split into equal-volume
horizontal layers (layer 1 on top). The surrounding ground is a stack of
uniform-thickness shells obtained by offsetting the submerged faces
outward along their normals, with faces kept planar and extended to their
mutual intersections (edge and corner rounding neglected). Every derived
quantity is algebraic in the storage scale factor, so evaluating the same
code on order-2 jets yields exact first and second sensitivities used by
the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .jet import Jet2, jcbrt, jsqrt, seed, value


@dataclass(frozen=True)
class StorageGeometry:
    """Truncated-pyramid pit with square top and bottom faces."""

    top_side_m: float = 153.3
    bottom_side_m: float = 73.2
    height_m: float = 15.0
    n_layers: int = 4

    def __post_init__(self):
        if not (self.top_side_m > self.bottom_side_m > 0.0):
            raise ConfigError("need top_side > bottom_side > 0")
        if self.height_m <= 0.0:
            raise ConfigError("height must be positive")
        if self.n_layers < 1:
            raise ConfigError("need at least one storage layer")


@dataclass(frozen=True)
class GroundMesh:
    """Uniform shells of ground between the pit wall and a fixed-temperature boundary."""

    n_layers: int = 2
    boundary_distance_m: float = 4.0
    boundary_temp_c: float = 13.5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("need at least one ground layer")
        if self.boundary_distance_m <= 0.0:
            raise ConfigError("boundary distance must be positive")


@dataclass(frozen=True)
class ThermalParams:
    """Material and heat-transfer constants for water, ground, lid, and wall."""

    rho: float = 1000.0          # kg/m3
    c_p: float = 4200.0          # J/(kg K)
    rho_g: float = 2000.0        # kg/m3
    c_p_g: float = 700.0         # J/(kg K)
    lambda_g: float = 0.47       # W/(m K)
    lambda_eff: float = 0.644    # W/(m K)
    u_top: float = 0.186         # W/(m2 K)
    u_wall: float = 90.0         # W/(m2 K)

    def __post_init__(self):
        for name in ("rho", "c_p", "rho_g", "c_p_g", "lambda_g", "lambda_eff", "u_top", "u_wall"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be strictly positive")


@dataclass
class ThermalNetwork:
    """Capacitances, resistances, and areas of the lumped storage+ground model.

    Entries are floats, or :class:`Jet2` when derived with a jet-valued
    scale factor. Layer index 0 is the top storage layer; ground index 0
    is the shell adjacent to the pit wall.
    """

    m: int
    n: int
    volume_total: object
    c_storage: list          # J/K, length m
    c_ground: list           # J/K, length n
    r_interface: list        # K/W, length m-1, storage layer i <-> i+1
    r_top: object            # K/W, lid to ambient
    r_contact: list          # K/W, length m, wall contact per layer
    r_ground0: object        # K/W, wall to first ground node (per-layer parallel path)
    r_chain: list            # K/W, length n, ground node j <-> j+1 (last: boundary)
    a_top: object
    a_cross: list            # m2, mid-height cross-section per layer
    a_wall: list             # m2, submerged wall area per layer
    a_shell: list            # m2, offset surface at each shell outer edge
    layer_heights: list      # m

    def validate(self):
        vals = [self.volume_total, self.r_top, self.r_ground0, self.a_top,
                *self.c_storage, *self.c_ground, *self.r_interface,
                *self.r_contact, *self.r_chain, *self.a_cross, *self.a_wall,
                *self.a_shell, *self.layer_heights]
        if any(value(v) <= 0.0 for v in vals):
            raise ConfigError("degenerate geometry: non-positive network quantity")
        shells = [value(a) for a in self.a_shell]
        if any(b < a for a, b in zip(shells, shells[1:])):
            raise ConfigError("ground-shell areas must be non-decreasing outward")
        return self


def frustum_volume(top_side, bottom_side, height):
    return height * (top_side**2 + top_side * bottom_side + bottom_side**2) / 3.0


def derive_network(geom: StorageGeometry, mesh: GroundMesh, tp: ThermalParams,
                   scale=1.0) -> ThermalNetwork:
    """Build the thermal network for storage volume ``scale`` times the reference.

    Side lengths grow with ``sqrt(scale)`` at fixed height, so volumes and
    horizontal areas are exactly proportional to ``scale``. ``scale`` may
    be a :class:`Jet2` to propagate sensitivities.
    """
    m, n = geom.n_layers, mesh.n_layers
    sigma = jsqrt(scale)
    a_t = sigma * geom.top_side_m
    a_b = sigma * geom.bottom_side_m
    h = geom.height_m

    vol = frustum_volume(a_t, a_b, h)

    # Equal-volume layer boundaries, counted from the bottom face upward.
    # Cumulative volume is cubic in the local side length, so boundaries
    # come from interpolating cubed side lengths.
    cut_sides = [jcbrt(a_b**3 + (j / m) * (a_t**3 - a_b**3)) for j in range(m + 1)]
    cut_heights = [h * (s - a_b) / (a_t - a_b) for s in cut_sides]

    layer_heights, a_cross, a_lateral = [], [], []
    for i in range(m):  # i = 0 is the top layer
        lo, hi = cut_heights[m - 1 - i], cut_heights[m - i]
        s_lo, s_hi = cut_sides[m - 1 - i], cut_sides[m - i]
        z = hi - lo
        mid = a_b + (a_t - a_b) * ((lo + hi) * 0.5) / h
        slant = jsqrt(z**2 + ((s_hi - s_lo) * 0.5) ** 2)
        layer_heights.append(z)
        a_cross.append(mid**2)
        a_lateral.append(2.0 * (s_lo + s_hi) * slant)

    a_wall = list(a_lateral)
    a_wall[m - 1] = a_wall[m - 1] + a_b**2  # bottom face drains through the last layer

    layer_volume = vol / m
    c_storage = [tp.rho * tp.c_p * layer_volume for _ in range(m)]

    r_interface = [layer_heights[i] / (tp.lambda_eff * a_cross[i]) for i in range(m - 1)]
    a_top = a_t**2
    r_top = 1.0 / (tp.u_top * a_top)
    r_contact = [1.0 / (tp.u_wall * a_wall[i]) for i in range(m)]

    # Ground shells: planar offsets of the submerged faces. The lateral
    # slant length of the offset body is (height + offset) * q with
    # q = sqrt(1 + slope^2), derived from the face-plane offset geometry.
    slope = (a_t - a_b) / (2.0 * h)
    q = jsqrt(1.0 + slope**2)

    def offset_area(t):
        top_side = a_t + 2.0 * t * q
        bot_side = a_b + 2.0 * t * (q - slope)
        lat = 2.0 * (top_side + bot_side) * ((h + t) * q)
        return lat + bot_side**2

    # Node centers sit at shell mid-offsets. Conduction links span center to
    # center (area taken at the path midpoint, the shell interface), with
    # half-length end links wall-to-first-center and last-center-to-boundary,
    # so the total conduction path equals the boundary distance for every
    # mesh and refinement converges to one continuum problem.
    delta = mesh.boundary_distance_m / n
    a_shell, c_ground, r_chain = [], [], []
    for j in range(n):
        a_mid = offset_area((j + 0.5) * delta)
        a_out = offset_area((j + 1.0) * delta)
        c_ground.append(tp.rho_g * tp.c_p_g * (a_mid * delta))
        a_shell.append(a_out)
        if j < n - 1:
            r_chain.append(delta / (tp.lambda_g * a_out))
    r_chain.append((delta * 0.5) / (
        tp.lambda_g * offset_area(mesh.boundary_distance_m - delta * 0.25)))

    r_g0_original = (delta * 0.5) / (tp.lambda_g * offset_area(delta * 0.25))
    r_ground0 = m * r_g0_original

    net = ThermalNetwork(
        m=m, n=n, volume_total=vol,
        c_storage=c_storage, c_ground=c_ground,
        r_interface=r_interface, r_top=r_top, r_contact=r_contact,
        r_ground0=r_ground0, r_chain=r_chain,
        a_top=a_top, a_cross=a_cross, a_wall=a_wall, a_shell=a_shell,
        layer_heights=layer_heights,
    )
    return net.validate()


@dataclass
class DynCoeffs:
    """Per-node coefficient products consumed by the dynamics evaluators.

    The continuous-time right-hand side is linear in these products, which
    is what makes scale sensitivities a drop-in coefficient swap.
    """

    m: int
    n: int
    t_bc_c: float
    inv_c: np.ndarray      # (m+n,) 1/C per node
    p_if_up: np.ndarray    # (m,) inv_c[i] / r_interface[i-1]; 0 at i=0
    p_if_dn: np.ndarray    # (m,) inv_c[i] / r_interface[i]; 0 at i=m-1
    p_top: float           # inv_c[0] / r_top
    p_sg_s: np.ndarray     # (m,) inv_c[i] / (r_ground0 + r_contact[i])
    p_sg_g: np.ndarray     # (m,) inv_c[m] / (r_ground0 + r_contact[i])
    p_ch_up: np.ndarray    # (n,) inv_c[m+j] / r_chain[j-1]; 0 at j=0
    p_ch_dn: np.ndarray    # (n,) inv_c[m+j] / r_chain[j] (last: to boundary)

    def node_capacities(self) -> np.ndarray:
        return 1.0 / self.inv_c


def _coeffs_from_network(net: ThermalNetwork, t_bc_c: float, pick) -> DynCoeffs:
    m, n = net.m, net.n
    inv_c = np.array([pick(1.0 / c) for c in net.c_storage]
                     + [pick(1.0 / c) for c in net.c_ground])
    g_if = [1.0 / r for r in net.r_interface]
    g_sg = [1.0 / (net.r_ground0 + net.r_contact[i]) for i in range(m)]
    g_ch = [1.0 / r for r in net.r_chain]

    p_if_up = np.zeros(m)
    p_if_dn = np.zeros(m)
    for i in range(m):
        if i > 0:
            p_if_up[i] = pick((1.0 / net.c_storage[i]) * g_if[i - 1])
        if i < m - 1:
            p_if_dn[i] = pick((1.0 / net.c_storage[i]) * g_if[i])
    p_top = pick((1.0 / net.c_storage[0]) * (1.0 / net.r_top))
    p_sg_s = np.array([pick((1.0 / net.c_storage[i]) * g_sg[i]) for i in range(m)])
    p_sg_g = np.array([pick((1.0 / net.c_ground[0]) * g_sg[i]) for i in range(m)])
    p_ch_up = np.zeros(n)
    p_ch_dn = np.zeros(n)
    for j in range(n):
        if j > 0:
            p_ch_up[j] = pick((1.0 / net.c_ground[j]) * g_ch[j - 1])
        p_ch_dn[j] = pick((1.0 / net.c_ground[j]) * g_ch[j])
    return DynCoeffs(m=m, n=n, t_bc_c=t_bc_c, inv_c=inv_c,
                     p_if_up=p_if_up, p_if_dn=p_if_dn, p_top=p_top,
                     p_sg_s=p_sg_s, p_sg_g=p_sg_g,
                     p_ch_up=p_ch_up, p_ch_dn=p_ch_dn)


def dyn_coeffs(geom: StorageGeometry, mesh: GroundMesh, tp: ThermalParams,
               scale: float = 1.0) -> DynCoeffs:
    """Dynamics coefficients at a fixed storage scale."""
    net = derive_network(geom, mesh, tp, scale)
    return _coeffs_from_network(net, mesh.boundary_temp_c, float)


def dyn_coeffs_with_sens(geom: StorageGeometry, mesh: GroundMesh, tp: ThermalParams,
                         scale: float) -> tuple[DynCoeffs, DynCoeffs, DynCoeffs]:
    """Coefficients plus exact first and second derivatives in the scale factor.

    Returns ``(val, d1, d2)``; the derivative bundles reuse the DynCoeffs
    container with every entry replaced by its derivative.
    """
    net = derive_network(geom, mesh, tp, seed(scale))
    t_bc = mesh.boundary_temp_c
    val = _coeffs_from_network(net, t_bc, lambda x: x.v if isinstance(x, Jet2) else float(x))
    d1 = _coeffs_from_network(net, t_bc, lambda x: x.d1 if isinstance(x, Jet2) else 0.0)
    d2 = _coeffs_from_network(net, t_bc, lambda x: x.d2 if isinstance(x, Jet2) else 0.0)
    return val, d1, d2
