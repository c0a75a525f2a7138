"""Command-line entry point.

Subcommands: verify, family, transform, falsify, simulate. A single JSON
config names the system and network files, the disturbance box, the
candidate set (box or paralleletope), and the schedule; see README for the
schema. Exit codes: 0 success/invariant, 1 error, 2 inconclusive,
3 witness or containment failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
import time
from pathlib import Path

import numpy as np

from .embedding import (
    NestedFamily,
    check_invariance,
    embedding_system,
    family_to_csv,
    family_to_json,
    integrate_backward,
    integrate_forward,
)
from .expressions import load_system
from .inclusions import ClosedLoopSystem
from .intervals import EmbeddingState, IntervalVector, set_rounding
from .networks import load_network
from .oracles import (
    Witness,
    boundary_check,
    monte_carlo_trajectories,
    replay_witness,
)
from .paralleletopes import (
    Paralleletope,
    TransformedSystem,
    choose_transform,
    embedding_for_transformed,
    find_equilibrium,
)

__all__ = ["main"]


def _box_from(spec: dict, what: str) -> IntervalVector:
    if "lo" in spec and "hi" in spec:
        return IntervalVector(spec["lo"], spec["hi"])
    if "center" in spec and "halfwidths" in spec:
        return IntervalVector.from_center_halfwidth(spec["center"],
                                                    spec["halfwidths"])
    raise ValueError(f"{what} needs lo/hi or center/halfwidths")


class Run:
    """Materialized config: system, controller, candidate set, schedule."""

    def __init__(self, config: dict, config_dir: Path):
        self.config = config
        base = config_dir
        self.field = load_system(base / config["system"])
        self.net = load_network(base / config["network"])
        self.sys = ClosedLoopSystem(self.field, self.net)
        self.wbox = _box_from(config["wbox"], "wbox")
        self.construction = config.get("construction", "jacobian")
        self.seed = int(config.get("seed", 0))
        self.h_forward = float(config.get("h_forward", 0.1))
        self.h_backward = float(config.get("h_backward", 0.05))
        self.steps = int(config.get("steps", 90))
        self.max_back_steps = int(config.get("max_back_steps", 2000))
        self.conv_tol = float(config.get("conv_tol", 1e-8))
        self.config_hash = hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
        self._resolve_set()

    def _equilibrium(self) -> np.ndarray:
        spec = self.config.get("equilibrium")
        if isinstance(spec, list):
            return np.asarray(spec, dtype=float)
        if isinstance(spec, dict):
            return find_equilibrium(self.sys, np.asarray(spec["x0"], dtype=float),
                                    horizon=float(spec.get("horizon", 100.0)),
                                    tol=float(spec.get("tol", 1e-9)),
                                    h=float(spec.get("h", 0.01)))
        raise ValueError("config needs an 'equilibrium' (list or search spec)")

    def _resolve_set(self) -> None:
        spec = self.config["set"]
        kind = spec.get("type", "box")
        self.explicit_localization = "localization_halfwidths" in spec
        self.localization: IntervalVector | None = None
        if self.explicit_localization:
            center = spec.get("localization_center")
            center = (self._equilibrium() if center in (None, "equilibrium")
                      else np.asarray(center, dtype=float))
            self.localization = IntervalVector.from_center_halfwidth(
                center, spec["localization_halfwidths"])
        if kind == "box":
            self.box = _box_from(spec, "set")
            self.ptope = None
            self.ts = None
            if self.localization is None:
                self.localization = self.box
            return
        if kind != "paralleletope":
            raise ValueError(f"unknown set type {kind!r}")
        tspec = spec.get("transform", "auto")
        if tspec == "auto":
            x_star = self._equilibrium()
            if self.localization is None:
                raise ValueError("auto transform needs localization_halfwidths")
            tmat, self.spectrum = choose_transform(self.sys, x_star,
                                                   self.localization)
        else:
            tmat = np.asarray(tspec, dtype=float)
            self.spectrum = None
        if "center" in spec and spec["center"] != "equilibrium":
            center_x = np.asarray(spec["center"], dtype=float)
        else:
            center_x = self._equilibrium()
        ybox = IntervalVector.from_center_halfwidth(tmat @ center_x,
                                                    spec["halfwidths"])
        self.ptope = Paralleletope(tmat, ybox)
        self.ts = TransformedSystem(self.sys, tmat)
        self.box = ybox  # embedding coordinates
        if self.localization is None:
            self.localization = self.ts.hull_x(ybox)

    def make_embedding(self):
        if self.ptope is None:
            return embedding_system(self.sys, self.wbox, self.construction,
                                    self.localization)
        # the initial Jacobian region must contain the paralleletope; fall
        # back to its hull when the configured region is only meant for the
        # transform choice
        hull = self.ts.hull_x(self.ptope.ybox)
        region = (self.localization
                  if self.localization.contains(hull) else hull)
        return embedding_for_transformed(self.ts, self.wbox, region)

    def backward_region(self) -> IntervalVector | None:
        # the backward run stops when the box leaves this region; for
        # paralleletopes the growth constraint lives in x-space and is already
        # enforced through the per-step localization, so no y-region applies
        if self.ptope is not None or not self.explicit_localization:
            return None
        return self.localization


def _load_run(args) -> Run:
    path = Path(args.config)
    with open(path) as fh:
        config = json.load(fh)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.rounding:
        config["rounding"] = args.rounding
    set_rounding(config.get("rounding", "sound"))
    return Run(config, path.parent)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    run = _load_run(args)
    out = _outdir(args)
    t0 = time.perf_counter()
    cert = check_invariance(run.make_embedding(), run.box,
                            config_hash=run.config_hash)
    elapsed = time.perf_counter() - t0
    cert.to_json(out / "certificate.json")
    print(f"verdict: {cert.verdict} ({elapsed:.2f} s)")
    if not cert.invariant:
        print("hint: run `invariant-kit falsify` to search for a boundary witness")
    return 0 if cert.invariant else 2


def _projection_planes(run: Run) -> list[tuple[int, int]]:
    planes = run.config.get("projection_planes")
    if planes is None:
        n = run.field.n
        planes = [[i + 1, i + 2] for i in range(0, n - 1, 2)]
    return [(int(a) - 1, int(b) - 1) for a, b in planes]


def _convex_hull_2d(pts: np.ndarray) -> np.ndarray:
    pts = np.unique(pts, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2 and np.cross(chain[-1] - chain[-2],
                                               p - chain[-2]) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _write_projections(run: Run, fam: NestedFamily, out: Path) -> None:
    import itertools
    planes = _projection_planes(run)
    tinv = None if run.ptope is None else np.linalg.inv(run.ptope.T)
    for a, b in planes:
        rows = []
        for m in fam.members:
            lo, hi = m.state.lower, m.state.upper
            if tinv is None:
                verts = np.array([[lo[a], lo[b]], [lo[a], hi[b]],
                                  [hi[a], hi[b]], [hi[a], lo[b]]])
            else:
                ycorners = np.array(list(itertools.product(*zip(lo, hi))))
                xcorners = ycorners @ tinv.T
                verts = _convex_hull_2d(xcorners[:, [a, b]])
            for k, v in enumerate(verts):
                rows.append((m.t, k, float(v[0]), float(v[1])))
        path = out / f"projection_x{a+1}-x{b+1}.csv"
        with open(path, "w") as fh:
            fh.write("t,vertex,px,py\n")
            for t, k, px, py in rows:
                fh.write(f"{t!r},{k},{px!r},{py!r}\n")


def cmd_family(args) -> int:
    run = _load_run(args)
    out = _outdir(args)
    es = run.make_embedding()
    s0 = EmbeddingState.from_box(run.box)
    t0 = time.perf_counter()
    try:
        fwd = integrate_forward(es, s0, run.h_forward, run.steps,
                                conv_tol=run.conv_tol,
                                config_hash=run.config_hash)
    except ValueError as exc:
        print(f"initial certification failed: {exc}")
        return 2
    bwd = integrate_backward(es, s0, run.h_backward,
                             region=run.backward_region(),
                             max_back_steps=run.max_back_steps,
                             config_hash=run.config_hash)
    fam = NestedFamily.merge(bwd, fwd)
    elapsed = time.perf_counter() - t0
    family_to_csv(fam, out / "family.csv")
    family_to_json(fam, out / "family.json")
    _write_projections(run, fam, out)
    certified = sum(m.certificate.invariant for m in fam.members)
    print(f"family: {len(fam.members)} members ({certified} certified, "
          f"converged={fwd.converged}) in {elapsed:.2f} s")
    if fam.aborted_reason:
        print(f"note: forward run stopped early: {fam.aborted_reason}")
    return 0


def cmd_transform(args) -> int:
    run = _load_run(args)
    out = _outdir(args)
    x_star = run._equilibrium()
    region = run.localization
    if region is None:
        raise ValueError("transform needs localization_halfwidths in the config")
    tmat, report = choose_transform(run.sys, x_star, region)
    doc = {
        "transform": [[float(v) for v in row] for row in tmat],
        "eigenvalues": [[float(z.real), float(z.imag)]
                        for z in report.eigenvalues],
        "stable": report.stable,
        "method": report.method,
        "condition": float(report.condition),
        "off_block_residual": float(report.off_block_residual),
        "equilibrium": [float(v) for v in x_star],
        "config_hash": run.config_hash,
    }
    with open(out / "transform.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    eigs = ", ".join(f"{z.real:.4g}{z.imag:+.4g}j" if z.imag else f"{z.real:.4g}"
                     for z in report.eigenvalues)
    print(f"spectrum: [{eigs}] stable={report.stable} method={report.method}")
    return 0


def cmd_falsify(args) -> int:
    run = _load_run(args)
    out = _outdir(args)
    samples = run.config.get("samples", {})
    if args.replay:
        with open(args.replay) as fh:
            doc = json.load(fh)
        transform = None if run.ptope is None else run.ptope.T
        ok = True
        for wdoc in doc.get("witnesses", []):
            wit = Witness(int(wdoc["face_index"]), wdoc["side"],
                          np.asarray(wdoc["x"], dtype=float),
                          np.asarray(wdoc["w"], dtype=float),
                          float(wdoc["outward_component"]))
            confirmed = replay_witness(run.sys, wit, transform=transform)
            print(f"witness face {wit.face_index} ({wit.side}): "
                  f"{'confirmed' if confirmed else 'NOT confirmed'}")
            ok &= confirmed
        return 0 if ok else 1
    region = run.ptope if run.ptope is not None else run.box
    report = boundary_check(run.sys, region, run.wbox,
                            n_samples=int(samples.get("n_samples", 100_000)),
                            w_samples=int(samples.get("w_samples", 3)),
                            seed=run.seed)
    report.to_json(out / "boundary_report.json")
    print(f"boundary check: {report.n_samples} evaluations, "
          f"{len(report.witnesses)} witnesses")
    return 0 if report.passed else 3


def cmd_simulate(args) -> int:
    run = _load_run(args)
    out = _outdir(args)
    samples = run.config.get("samples", {})
    count = int(samples.get("count", 100))
    horizon = float(samples.get("horizon", 10.0))
    h = float(samples.get("h", run.h_forward))
    starts = None
    if run.ptope is not None:
        rng = np.random.Generator(np.random.Philox(key=[run.seed, 2 ** 32]))
        ys = rng.uniform(run.ptope.ybox.lo, run.ptope.ybox.hi,
                         size=(count, run.field.n))
        starts = ys @ np.linalg.inv(run.ptope.T).T
        box0 = run.ts.hull_x(run.ptope.ybox)
    else:
        box0 = run.box
    bundle = monte_carlo_trajectories(run.sys, box0, run.wbox, count, horizon,
                                      h, seed=run.seed, starts=starts)
    if run.ptope is None:
        inside = np.all((bundle.states >= run.box.lo)
                        & (bundle.states <= run.box.hi), axis=(1, 2))
    else:
        ys = bundle.states @ run.ptope.T.T
        inside = np.all((ys >= run.ptope.ybox.lo)
                        & (ys <= run.ptope.ybox.hi), axis=(1, 2))
    ok = bool(np.all(inside) and not np.any(bundle.divergent))
    doc = {
        "count": int(bundle.states.shape[0]),
        "steps": int(bundle.states.shape[1] - 1),
        "contained": int(np.sum(inside)),
        "divergent": int(np.sum(bundle.divergent)),
        "passed": ok,
        "config_hash": run.config_hash,
    }
    with open(out / "simulation_report.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"simulate: {doc['contained']}/{doc['count']} trajectories contained")
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="invariant-kit",
        description="Certify and search forward-invariant sets of "
                    "neural-network controlled systems.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for name, fn in (("verify", cmd_verify), ("family", cmd_family),
                     ("transform", cmd_transform), ("falsify", cmd_falsify),
                     ("simulate", cmd_simulate)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--rounding", choices=["sound", "fast"], default=None,
                       help="override endpoint rounding")
        if name == "falsify":
            p.add_argument("--replay", default=None,
                           help="re-evaluate witnesses from a report JSON")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    _sys.exit(main())
