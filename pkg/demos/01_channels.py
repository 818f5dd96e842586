"""
The radio scene and its channels
================================

Two reflecting surfaces sit between a four-antenna base station and two
users. This walk-through builds the scene, draws channel realizations and
looks at how much of the signal comes from the line-of-sight part.
"""

import numpy as np

from risorch.geometry_channel import (RiceanConfig, SceneGeometry, advance_mobility, draw_channel_set,
                                      paper_mobility_states, pathloss_db)

# the reference deployment with 32 surface elements in total (4x4 per surface)
geometry = SceneGeometry.paper_default(32)
print("wavelength (m):", geometry.wavelength)
print("surface shape:", geometry.ris_shape, "elements per surface:", geometry.elements_per_ris)

# free-space loss of every hop, in dB
for m, ris in enumerate(geometry.ris_positions):
    d_bs = np.linalg.norm(ris - geometry.bs_position)
    print(f"BS -> RIS{m}: {d_bs:.3f} m, {pathloss_db(d_bs, geometry.wavelength):.2f} dB")
    for k, ue in enumerate(geometry.ue_positions):
        d = np.linalg.norm(ue - ris)
        print(f"  RIS{m} -> UE{k}: {d:.3f} m, {pathloss_db(d, geometry.wavelength):.2f} dB")

# one realization: shapes follow (surface, user, element) ordering
rng = np.random.default_rng(0)
channels = draw_channel_set(geometry, RiceanConfig(), rng)
print("ris_bs", channels.ris_bs.shape, "ue_ris", channels.ue_ris.shape, "direct", channels.direct.shape)

# with a strong Ricean factor only the small scattered part changes between draws
second = draw_channel_set(geometry, RiceanConfig(), rng)
change = np.linalg.norm(second.ue_ris - channels.ue_ris) / np.linalg.norm(channels.ue_ris)
print(f"relative change between draws, kappa=1000: {change:.4f}")

# pure scattering (kappa = 0) changes completely from draw to draw
a = draw_channel_set(geometry, RiceanConfig(0.0, 0.0), rng)
b = draw_channel_set(geometry, RiceanConfig(0.0, 0.0), rng)
print(f"relative change between draws, kappa=0: "
      f"{np.linalg.norm(b.ue_ris - a.ue_ris) / np.linalg.norm(a.ue_ris):.4f}")

# walking users: 1.4 m/s, 6 ms per step, zig-zag legs of 2 m
states = paper_mobility_states()
path = [states[0].position]
for _ in range(2000):
    states = [advance_mobility(s, 0.006) for s in states]
    path.append(states[0].position)
path = np.array(path)
print("UE0 start", path[0], "after 12 s", path[-1].round(3))
print("distance walked:", np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)).round(3), "m")
