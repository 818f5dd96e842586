"""Scene geometry and channel realizations for the multi-RIS MISO downlink.

Channels follow the cascaded BS -> RIS -> UE model: each RIS-BS matrix and
each UE-RIS vector is Ricean (rank-one LOS steering term plus CN(0, 1)
scattering), and the direct BS-UE links are Rayleigh with an attenuation
factor. Pathloss factors are kept separate from the small-scale fading so
that observations can expose the unscaled channel gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

#: Table of the reference deployment (meters, Hz).
PAPER_BS_POSITION = (10.0, 5.0, 2.0)
PAPER_RIS_POSITIONS = ((7.5, 13.0, 2.0), (12.5, 13.0, 2.0))
PAPER_UE_POSITIONS = ((8.775, 14.394, 1.634), (9.648, 13.281, 1.632))
PAPER_CARRIER_FREQUENCY = 5e9
PAPER_KAPPA_DB = 30.0

AZIMUTH_CONVENTIONS = ("paper", "upa_standard")


class ConfigError(ValueError):
    """Raised for inconsistent experiment, environment or network settings."""


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def pathloss_db(d, wavelength):
    """Free-space loss ``20 log10(4 pi d / lambda)`` in dB."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or wavelength <= 0:
        raise ValueError("distance and wavelength must be positive")
    return 20.0 * np.log10(4.0 * np.pi * d / wavelength)


def pathloss_attenuation(d, wavelength):
    """Linear power attenuation ``(lambda / (4 pi d))**2`` at distance ``d``.

    This is the free-space dB loss inverted and converted to linear scale, so
    it multiplies channel *power*; channels are scaled by its square root.
    """
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)) or not wavelength > 0:
        raise ValueError(f"distance and wavelength must be positive, got d={d}, wavelength={wavelength}")
    out = (wavelength / (4.0 * np.pi * d)) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AnglePair:
    azimuth: float
    elevation: float


@dataclass(frozen=True)
class ArrayFrame:
    """Local frame of an array: boresight is local x, up is local z."""

    boresight: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def rotation(self) -> np.ndarray:
        """Rows are the local x, y, z axes expressed in global coordinates."""
        z = np.asarray(self.up, dtype=float)
        z = z / np.linalg.norm(z)
        x = np.asarray(self.boresight, dtype=float)
        # Gram-Schmidt: boresight is made orthogonal to the up vector
        x = x - np.dot(x, z) * z
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise ValueError("boresight must not be parallel to the up vector")
        x = x / nx
        y = np.cross(z, x)
        return np.stack([x, y, z])


def angles_between(origin, target, frame: ArrayFrame) -> AnglePair:
    """Azimuth/elevation of ``target`` seen from ``origin`` in ``frame``.

    Elevation is the polar angle from the local up axis; azimuth is measured
    in the local horizontal plane from the boresight.
    """
    delta = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    r = np.linalg.norm(delta)
    if r == 0:
        raise ValueError("coincident points have no direction")
    local = frame.rotation() @ delta
    elevation = float(np.arccos(np.clip(local[2] / r, -1.0, 1.0)))
    azimuth = float(np.arctan2(local[1], local[0]))
    if azimuth == -np.pi:
        azimuth = np.pi
    return AnglePair(azimuth, elevation)


def steering_vector(angles: AnglePair, n_h: int, n_v: int, spacing: float,
                    convention: str = "paper") -> np.ndarray:
    """Unit-norm planar-array response ``f_el(theta) kron f_az(phi)``.

    With ``convention="paper"`` the horizontal phase increment is
    ``2 pi d sin(phi) cos(phi)``; ``"upa_standard"`` uses
    ``2 pi d sin(theta) sin(phi)`` instead.
    """
    if n_h < 1 or n_v < 1:
        raise ValueError("array dimensions must be positive")
    phi, theta = angles.azimuth, angles.elevation
    omega = 2.0 * np.pi * spacing * np.cos(theta)
    if convention == "paper":
        psi = 2.0 * np.pi * spacing * np.sin(phi) * np.cos(phi)
    elif convention == "upa_standard":
        psi = 2.0 * np.pi * spacing * np.sin(theta) * np.sin(phi)
    else:
        raise ValueError(f"unknown azimuth convention {convention!r}")
    f_el = np.exp(1j * omega * np.arange(1, n_v + 1)) / np.sqrt(n_v)
    f_az = np.exp(1j * psi * np.arange(1, n_h + 1)) / np.sqrt(n_h)
    return np.kron(f_el, f_az)


def ris_shape_for(n_elements: int) -> tuple[int, int]:
    """Most-square factorization ``(n_h, n_v)`` with ``n_h >= n_v``."""
    if n_elements < 1:
        raise ValueError("an RIS needs at least one element")
    n_v = int(np.floor(np.sqrt(n_elements)))
    while n_elements % n_v:
        n_v -= 1
    return n_elements // n_v, n_v


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric CN(0, variance) samples."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class SceneGeometry:
    bs_position: np.ndarray
    ris_positions: np.ndarray
    ue_positions: np.ndarray
    carrier_frequency: float = PAPER_CARRIER_FREQUENCY
    element_spacing_ris: float = 0.5
    element_spacing_bs: float = 0.5
    ris_shape: tuple[int, int] = (4, 4)
    bs_antennas: int = 4
    bs_frame: ArrayFrame | None = None
    ris_frames: Sequence[ArrayFrame] | None = None
    azimuth_convention: str = "paper"

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float).reshape(3)
        self.ris_positions = np.asarray(self.ris_positions, dtype=float).reshape(-1, 3)
        self.ue_positions = np.asarray(self.ue_positions, dtype=float).reshape(-1, 3)
        for arr in (self.bs_position, self.ris_positions, self.ue_positions):
            if not np.all(np.isfinite(arr)):
                raise ValueError("positions must be finite")
        if self.carrier_frequency <= 0 or self.element_spacing_ris <= 0 or self.element_spacing_bs <= 0:
            raise ValueError("frequency and element spacings must be positive")
        if self.bs_antennas < 1 or min(self.ris_shape) < 1:
            raise ValueError("array sizes must be positive")
        if self.azimuth_convention not in AZIMUTH_CONVENTIONS:
            raise ValueError(f"azimuth_convention must be one of {AZIMUTH_CONVENTIONS}")
        self.ris_shape = (int(self.ris_shape[0]), int(self.ris_shape[1]))
        if self.bs_frame is None:
            centroid = self.ris_positions.mean(axis=0)
            self.bs_frame = ArrayFrame(tuple(centroid - self.bs_position))
        if self.ris_frames is None:
            centroid = self.ue_positions.mean(axis=0)
            self.ris_frames = tuple(ArrayFrame(tuple(centroid - p)) for p in self.ris_positions)
        if len(self.ris_frames) != self.n_ris:
            raise ValueError("one frame per RIS is required")

    @classmethod
    def paper_default(cls, n_tot: int = 32, **overrides) -> "SceneGeometry":
        """Reference two-RIS, two-UE deployment with ``n_tot`` RIS elements in total."""
        n_ris = len(PAPER_RIS_POSITIONS)
        if n_tot % n_ris:
            raise ValueError("n_tot must split evenly over the RISs")
        kwargs = dict(
            bs_position=PAPER_BS_POSITION,
            ris_positions=PAPER_RIS_POSITIONS,
            ue_positions=PAPER_UE_POSITIONS,
            ris_shape=ris_shape_for(n_tot // n_ris),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def with_ue_positions(self, ue_positions) -> "SceneGeometry":
        # frames stay attached to the deployment, not to the moving UEs
        return replace(self, ue_positions=np.asarray(ue_positions, dtype=float))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def n_ris(self) -> int:
        return len(self.ris_positions)

    @property
    def n_ues(self) -> int:
        return len(self.ue_positions)

    @property
    def elements_per_ris(self) -> int:
        return self.ris_shape[0] * self.ris_shape[1]

    @property
    def n_tot(self) -> int:
        return self.n_ris * self.elements_per_ris

    def ris_steering(self, m: int, angles: AnglePair) -> np.ndarray:
        n_h, n_v = self.ris_shape
        return steering_vector(angles, n_h, n_v, self.element_spacing_ris, self.azimuth_convention)

    def bs_steering(self, angles: AnglePair) -> np.ndarray:
        return steering_vector(angles, self.bs_antennas, 1, self.element_spacing_bs, self.azimuth_convention)


@dataclass(frozen=True)
class RiceanConfig:
    kappa_ris_bs: float = db_to_linear(PAPER_KAPPA_DB)
    kappa_ue_ris: float = db_to_linear(PAPER_KAPPA_DB)
    direct_attenuation: float = 0.0

    def __post_init__(self):
        if self.kappa_ris_bs < 0 or self.kappa_ue_ris < 0:
            raise ValueError("Ricean factors must be non-negative")
        if not 0.0 <= self.direct_attenuation <= 1.0:
            raise ValueError("direct_attenuation must lie in [0, 1]")


PURE_LOS_KAPPA = 1e12


def _ricean_weights(kappa: float) -> tuple[float, float]:
    # factors this large are treated as the pure-LOS limit
    if kappa >= PURE_LOS_KAPPA:
        return 1.0, 0.0
    return np.sqrt(kappa / (kappa + 1.0)), np.sqrt(1.0 / (kappa + 1.0))


def los_ris_bs(geometry: SceneGeometry, m: int) -> np.ndarray:
    """Rank-one LOS matrix ``f_RIS^H(AoA) f_BS(AoD)`` of shape (N, N_T)."""
    ris = geometry.ris_positions[m]
    aoa = angles_between(ris, geometry.bs_position, geometry.ris_frames[m])
    aod = angles_between(geometry.bs_position, ris, geometry.bs_frame)
    return np.outer(geometry.ris_steering(m, aoa).conj(), geometry.bs_steering(aod))


def generate_ris_bs_channel(geometry: SceneGeometry, ricean: RiceanConfig, m: int,
                            rng: np.random.Generator, los: np.ndarray | None = None) -> np.ndarray:
    if los is None:
        los = los_ris_bs(geometry, m)
    w_los, w_nlos = _ricean_weights(ricean.kappa_ris_bs)
    nlos = complex_normal(rng, (geometry.elements_per_ris, geometry.bs_antennas))
    return w_los * los + w_nlos * nlos


def generate_ue_ris_channel(geometry: SceneGeometry, ricean: RiceanConfig, m: int, k: int,
                            rng: np.random.Generator, los: np.ndarray | None = None) -> np.ndarray:
    if los is None:
        aod = angles_between(geometry.ris_positions[m], geometry.ue_positions[k], geometry.ris_frames[m])
        los = geometry.ris_steering(m, aod)
    w_los, w_nlos = _ricean_weights(ricean.kappa_ue_ris)
    return w_los * los + w_nlos * complex_normal(rng, geometry.elements_per_ris)


def generate_direct_channel(nu: float, n_t: int, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= nu <= 1.0:
        raise ValueError("attenuation must lie in [0, 1]")
    if nu == 0.0:
        return np.zeros(n_t, dtype=complex)
    return complex_normal(rng, n_t, variance=nu)


@dataclass
class ChannelSet:
    """One coherence-interval realization of every link.

    Arrays are indexed ``ris_bs[m]`` (N, N_T), ``ue_ris[m, k]`` (N,),
    ``direct[k]`` (N_T,). ``aods_ris_ue[m, k]`` holds (azimuth, elevation)
    of UE k seen from RIS m.
    """

    ris_bs: np.ndarray
    ue_ris: np.ndarray
    direct: np.ndarray
    pathloss_direct: np.ndarray
    pathloss_ris_bs: np.ndarray
    pathloss_ue_ris: np.ndarray
    aods_ris_ue: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 2)))

    @property
    def n_ris(self) -> int:
        return self.ris_bs.shape[0]

    @property
    def n_ues(self) -> int:
        return self.direct.shape[0]

    @property
    def bs_antennas(self) -> int:
        return self.direct.shape[1]


@dataclass
class _StaticTerms:
    los_ris_bs: np.ndarray
    los_ue_ris: np.ndarray
    aods: np.ndarray
    pathloss_direct: np.ndarray
    pathloss_ris_bs: np.ndarray
    pathloss_ue_ris: np.ndarray


def static_terms(geometry: SceneGeometry) -> _StaticTerms:
    """Geometry-only quantities: LOS components, AoDs and pathloss factors."""
    M, K = geometry.n_ris, geometry.n_ues
    lam = geometry.wavelength
    los_h = np.stack([los_ris_bs(geometry, m) for m in range(M)])
    los_g = np.empty((M, K, geometry.elements_per_ris), dtype=complex)
    aods = np.empty((M, K, 2))
    for m in range(M):
        for k in range(K):
            a = angles_between(geometry.ris_positions[m], geometry.ue_positions[k], geometry.ris_frames[m])
            aods[m, k] = a.azimuth, a.elevation
            los_g[m, k] = geometry.ris_steering(m, a)
    d_k = np.linalg.norm(geometry.ue_positions - geometry.bs_position, axis=1)
    d_m = np.linalg.norm(geometry.ris_positions - geometry.bs_position, axis=1)
    d_mk = np.linalg.norm(geometry.ris_positions[:, None, :] - geometry.ue_positions[None, :, :], axis=2)
    return _StaticTerms(
        los_h, los_g, aods,
        np.atleast_1d(pathloss_attenuation(d_k, lam)),
        np.atleast_1d(pathloss_attenuation(d_m, lam)),
        np.atleast_2d(pathloss_attenuation(d_mk, lam)),
    )


def draw_channel_set(geometry: SceneGeometry, ricean: RiceanConfig, rng: np.random.Generator,
                     terms: _StaticTerms | None = None) -> ChannelSet:
    """Draw every link for one coherence interval.

    ``terms`` may carry precomputed :func:`static_terms` for the same
    geometry; the random draws are identical either way.
    """
    if terms is None:
        terms = static_terms(geometry)
    M, K = geometry.n_ris, geometry.n_ues
    ris_bs = np.stack([generate_ris_bs_channel(geometry, ricean, m, rng, los=terms.los_ris_bs[m])
                       for m in range(M)])
    ue_ris = np.empty((M, K, geometry.elements_per_ris), dtype=complex)
    for m in range(M):
        for k in range(K):
            ue_ris[m, k] = generate_ue_ris_channel(geometry, ricean, m, k, rng, los=terms.los_ue_ris[m, k])
    direct = np.stack([generate_direct_channel(ricean.direct_attenuation, geometry.bs_antennas, rng)
                       for _ in range(K)])
    return ChannelSet(
        ris_bs=ris_bs,
        ue_ris=ue_ris,
        direct=direct,
        pathloss_direct=terms.pathloss_direct.copy(),
        pathloss_ris_bs=terms.pathloss_ris_bs.copy(),
        pathloss_ue_ris=terms.pathloss_ue_ris.copy(),
        aods_ris_ue=terms.aods.copy(),
    )


@dataclass(frozen=True)
class UeMobilityState:
    position: tuple[float, float, float]
    heading: float
    speed: float = 1.4
    leg_displacement: float = 0.0
    turnaround: float = 2.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if not 0.0 <= self.leg_displacement <= self.turnaround:
            raise ValueError("leg displacement must lie in [0, turnaround]")


def advance_mobility(state: UeMobilityState, dt: float) -> UeMobilityState:
    """Walk ``speed * dt`` along the heading, reversing every ``turnaround`` meters."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos = np.asarray(state.position, dtype=float)
    heading = state.heading
    leg = state.leg_displacement
    remaining = state.speed * dt
    while remaining > 0:
        step = min(remaining, state.turnaround - leg)
        pos = pos + step * np.array([np.cos(heading), np.sin(heading), 0.0])
        leg += step
        remaining -= step
        if leg >= state.turnaround and (remaining > 0 or step == 0):
            heading = float(np.angle(np.exp(1j * (heading + np.pi))))
            leg = 0.0
    return replace(state, position=tuple(pos), heading=heading, leg_displacement=leg)


def paper_mobility_states(ue_positions=PAPER_UE_POSITIONS, speed: float = 1.4) -> list[UeMobilityState]:
    """UEs walking at +45 and -45 degrees from the x axis."""
    headings = [np.pi / 4, -np.pi / 4]
    return [UeMobilityState(tuple(float(c) for c in p), headings[i % 2], speed)
            for i, p in enumerate(ue_positions)]
