#!/usr/bin/env python3
"""Regenerate the shipped demo configs under configs/.

Run from the repository root: python3 scripts/make_demo_configs.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from invariant_kit import (  # noqa: E402
    build_linear_relu_net,
    parse_vector_field,
    save_network,
    save_system,
)

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "configs"


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def scalar_demos():
    vf = parse_vector_field(["0 - x1 + 0*u1"], (1, 1, 0))
    save_system(vf, OUT / "scalar_decay_system.json")
    vf2 = parse_vector_field(["x1 + 0*u1"], (1, 1, 0))
    save_system(vf2, OUT / "scalar_growth_system.json")
    save_network(build_linear_relu_net(np.zeros((1, 1))),
                 OUT / "zero_controller_1d.json")
    base = {
        "system": "scalar_decay_system.json",
        "network": "zero_controller_1d.json",
        "wbox": {"lo": [], "hi": []},
        "set": {"type": "box", "lo": [-1.0], "hi": [1.0]},
        "construction": "jacobian",
        "h_forward": 0.1,
        "h_backward": 0.05,
        "steps": 300,
        "conv_tol": 1e-8,
        "seed": 0,
        "samples": {"n_samples": 10000, "w_samples": 0, "count": 100,
                    "horizon": 5.0, "h": 0.1},
    }
    write_json(OUT / "scalar_decay.json", base)
    growth = dict(base, system="scalar_growth_system.json")
    write_json(OUT / "scalar_growth.json", growth)


def planar_demo():
    vf = parse_vector_field(
        ["0.25*x2 - 0.5*x1 + u1 + w1", "0.25*x1 - 0.5*x2 + u2 + w2"], (2, 2, 2))
    save_system(vf, OUT / "planar_system.json")
    save_network(build_linear_relu_net(np.array([[-2.0, 0.75], [0.75, -2.0]])),
                 OUT / "planar_controller.json")
    write_json(OUT / "planar_family.json", {
        "system": "planar_system.json",
        "network": "planar_controller.json",
        "wbox": {"center": [0.0, 0.0], "halfwidths": [0.01, 0.01]},
        "set": {"type": "box", "lo": [-0.5, -0.5], "hi": [0.5, 0.5],
                "localization_halfwidths": [0.7, 0.7],
                "localization_center": [0.0, 0.0]},
        "construction": "jacobian",
        "h_forward": 0.1,
        "h_backward": 0.05,
        "steps": 200,
        "conv_tol": 1e-8,
        "seed": 0,
        "samples": {"n_samples": 20000, "w_samples": 3, "count": 100,
                    "horizon": 10.0, "h": 0.1},
    })


def leader_follower_demo():
    f_texts = [
        "x3",
        "x4",
        "20*tanh(u1/20) + w1",
        "20*tanh(u2/20) + w2",
        "x7",
        "x8",
        "20*tanh((6*(x1-x5) + 7*(x3-x7))/20) + w3",
        "20*tanh((6*(x2-x6) + 7*(x4-x8))/20) + w4",
    ]
    vf = parse_vector_field(f_texts, (8, 2, 4))
    save_system(vf, OUT / "leader_follower_system.json")
    gain = np.zeros((2, 8))
    gain[0, 0] = gain[1, 1] = -8.0
    gain[0, 2] = gain[1, 3] = -6.0
    save_network(build_linear_relu_net(gain), OUT / "leader_controller.json")
    write_json(OUT / "leader_follower_family.json", {
        "system": "leader_follower_system.json",
        "network": "leader_controller.json",
        "wbox": {"center": [0.0, 0.0, 0.0, 0.0],
                 "halfwidths": [0.01, 0.01, 0.01, 0.01]},
        "equilibrium": {"x0": [0.02, -0.01, 0.0, 0.0, 0.01, 0.01, 0.0, 0.0],
                        "horizon": 40.0, "tol": 1e-10, "h": 0.01},
        "set": {
            "type": "paralleletope",
            "transform": "auto",
            "center": "equilibrium",
            "halfwidths": [0.03, 0.03, 0.006, 0.006, 0.006, 0.006, 0.03, 0.03],
            "localization_halfwidths": [0.06, 0.06, 0.06, 0.06,
                                        0.25, 0.25, 0.325, 0.325],
        },
        "construction": "jacobian",
        "h_forward": 0.1,
        "h_backward": 0.05,
        "steps": 90,
        "max_back_steps": 200,
        "conv_tol": 1e-8,
        "seed": 0,
        "projection_planes": [[1, 2], [3, 4], [5, 6], [7, 8]],
        "samples": {"n_samples": 20000, "w_samples": 3, "count": 100,
                    "horizon": 9.0, "h": 0.1},
    })


def main():
    OUT.mkdir(exist_ok=True)
    scalar_demos()
    planar_demo()
    leader_follower_demo()
    print(f"wrote demo configs to {OUT}")


if __name__ == "__main__":
    main()
