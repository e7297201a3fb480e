"""TOML-driven runs, artifact layout, and the ``weyllab`` command line.

Config tables: [model] (symbol, h, kind, params), [gamma] (re/im edge
pairs), [schedule] (exponents and lab overrides), [draws] (count, seed,
law, run knobs), [output] (dir).

Run directories are content addressed: sha256 of the raw config bytes
(first 12 hex digits) plus the seed.  An existing run directory is never
overwritten.  ``manifest.json`` is written with ``incomplete: true`` before
any computation and flipped at the end, so interrupted runs are
recognizable.  ``eigenvalues.csv`` is written with %.17g floats and must be
bit-identical across reruns of the same config and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import CertificateError, RefusalError, WeylLabError
from .experiments import counterexample_check, weyl_experiment
from .perturbation import (
    ParameterSchedule,
    build_schedule,
    gaussian_law,
    uniform_ball_law,
)
from .symbols import REGISTRY, PhaseGrid, PlanarDomain

VERSION = "0.1.0"

_LAWS = ("uniform_ball", "gaussian")
_KINDS = ("weyl", "counterexample")


# ---------------------------------------------------------------------------
# config loading and validation


def load_config(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        cfg = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise RefusalError(f"config is not valid TOML: {exc}") from exc
    return cfg, raw


def validate_config(cfg: dict) -> dict:
    """Check the config shape and the schedule inequalities.

    Returns a normalized dict with constructed objects under private keys.
    All violations are collected and reported together.
    """
    bad = []

    model = cfg.get("model", {})
    name = model.get("symbol")
    if name not in REGISTRY:
        bad.append(f"model.symbol must be one of {sorted(REGISTRY)}, "
                   f"got {name!r}")
    h = model.get("h")
    if not isinstance(h, (int, float)) or not h > 0:
        bad.append(f"model.h must be a positive number, got {h!r}")
    kind = model.get("kind", "weyl")
    if kind not in _KINDS:
        bad.append(f"model.kind must be one of {_KINDS}, got {kind!r}")

    gam = cfg.get("gamma", {})
    gamma = None
    re_edges, im_edges = gam.get("re"), gam.get("im")
    if (not isinstance(re_edges, list) or len(re_edges) != 2
            or not isinstance(im_edges, list) or len(im_edges) != 2):
        if kind == "weyl":
            bad.append("gamma.re and gamma.im must each be a [lo, hi] pair")
    elif not (re_edges[0] < re_edges[1] and im_edges[0] < im_edges[1]):
        bad.append("gamma edges must be increasing")
    else:
        gamma = PlanarDomain.rect(re_edges[0], re_edges[1],
                                  im_edges[0], im_edges[1])

    sched_cfg = cfg.get("schedule", {})
    sched = None
    try:
        sched = build_schedule(
            n=int(sched_cfg.get("n", 1)),
            kappa=float(sched_cfg.get("kappa", 1.0)),
            s=float(sched_cfg.get("s", 2.0)),
            eps=float(sched_cfg.get("eps", 0.5)),
            mode=sched_cfg.get("mode", "lab"),
            freq_exp=sched_cfg.get("freq_exp"),
            amp_exp=sched_cfg.get("amp_exp"),
            eps0_slack=float(sched_cfg.get("eps0_slack", 0.1)),
            **{k: sched_cfg[k] for k in
               ("l_lab", "r_lab", "coupling_exp_lab", "ladder_exp_lab")
               if k in sched_cfg},
        )
    except WeylLabError as exc:
        bad.append(str(exc))

    draws_cfg = cfg.get("draws", {})
    law_name = draws_cfg.get("law", "uniform_ball")
    if law_name not in _LAWS:
        bad.append(f"draws.law must be one of {_LAWS}, got {law_name!r}")
    if law_name == "gaussian" and "sigmas" not in draws_cfg:
        bad.append("draws.sigmas is required for the gaussian law")
    seed = draws_cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        bad.append(f"draws.seed must be a nonnegative integer, got {seed!r}")
    count = draws_cfg.get("count", 10)
    if not isinstance(count, int) or count < 1:
        bad.append(f"draws.count must be a positive integer, got {count!r}")

    renorm = cfg.get("renorm")
    if renorm is not None:
        theta = renorm.get("theta", 0.2)
        if not 0.0 < theta < 0.25:
            bad.append(f"renorm.theta must lie in (0, 1/4), got {theta!r}")

    if bad:
        raise RefusalError("invalid config:\n  " + "\n  ".join(bad))

    out = dict(cfg)
    out["_symbol"] = REGISTRY[name](**model.get("params", {}))
    out["_gamma"] = gamma
    out["_schedule"] = sched
    out["_kind"] = kind
    radius = sched.coefficient_radius(float(h))
    if law_name == "uniform_ball":
        out["_law"] = uniform_ball_law(radius)
    else:
        out["_law"] = gaussian_law(radius, draws_cfg["sigmas"])
    out["_seed"] = seed
    out["_count"] = count
    return out


# ---------------------------------------------------------------------------
# artifacts


def run_identifier(raw: bytes, seed: int) -> str:
    return f"{hashlib.sha256(raw).hexdigest()[:12]}-seed{seed}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_rows(run_id: str, records) -> str:
    lines = ["run,draw,re,im"]
    for draw, ev in records:
        for z in ev:
            lines.append(f"{run_id},{draw},{z.real:.17g},{z.imag:.17g}")
    return "\n".join(lines) + "\n"


def orchestrate(cfg: dict, raw: bytes, out_root=None) -> Path:
    """Execute the configured experiment and lay out the run directory."""
    norm = validate_config(cfg)
    if out_root is None:
        out_root = cfg.get("output", {}).get("dir", "runs")
    run_id = run_identifier(raw, norm["_seed"])
    run_dir = Path(out_root) / run_id
    if run_dir.exists():
        raise RefusalError(
            f"run directory {run_dir} already exists; runs are never "
            "overwritten"
        )
    (run_dir / "plotdata").mkdir(parents=True)

    manifest = {
        "run": run_id, "version": VERSION,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": norm["_seed"], "kind": norm["_kind"],
        "files": ["config.toml", "schedule.json", "eigenvalues.csv",
                  "results.jsonl", "report.json", "plotdata/"],
        "incomplete": True,
    }
    _write_json(run_dir / "manifest.json", manifest)
    (run_dir / "config.toml").write_bytes(raw)

    sym = norm["_symbol"]
    sched: ParameterSchedule = norm["_schedule"]
    h = float(cfg["model"]["h"])
    draws_cfg = cfg.get("draws", {})
    tau0 = float(draws_cfg.get("tau0", np.sqrt(h)))
    _write_json(run_dir / "schedule.json", sched.to_json(h, tau0))

    if norm["_kind"] == "weyl":
        g = int(draws_cfg.get("grid", 512))
        rep = weyl_experiment(
            sym, norm["_gamma"], sched, norm["_law"], h,
            n_draws=norm["_count"], seed=norm["_seed"],
            tolerance=float(draws_cfg.get("tolerance", 0.15)), tau0=tau0,
            grid=PhaseGrid(g, g), experiment_id=run_id,
        )
        records = [(d.draw, d.eigenvalues) for d in [rep.control] + rep.draws]
        jsonl = [{"draw": d.draw, "count": d.count,
                  "boundary_flagged": d.boundary_flagged,
                  "deviation": d.deviation, "stream": d.stream}
                 for d in [rep.control] + rep.draws]
        report = {"kind": "weyl", **rep.to_json()}
        dev_lines = ["draw,count,deviation"]
        for d in rep.draws:
            dev_lines.append(f"{d.draw},{d.count},{d.deviation:.17g}")
        (run_dir / "plotdata" / "deviations.csv").write_text(
            "\n".join(dev_lines) + "\n")
        ctl = ["re,im"] + [f"{z.real:.17g},{z.imag:.17g}"
                           for z in rep.control.eigenvalues]
        (run_dir / "plotdata" / "control_spectrum.csv").write_text(
            "\n".join(ctl) + "\n")
    else:
        delta = float(draws_cfg.get("delta", 1e-3))
        rep = counterexample_check(
            sym, sched, norm["_law"], h, delta,
            n_draws=norm["_count"], seed=norm["_seed"],
            k_max=int(draws_cfg.get("k_max", 80)),
            k_guard=int(draws_cfg.get("k_guard", 30)),
        )
        records = [(d["draw"], ev)
                   for d, ev in zip(rep.per_draw, rep.spectra)]
        jsonl = list(rep.per_draw)
        report = {"kind": "counterexample", "line_im": rep.line_im,
                  "max_distance": rep.max_distance,
                  "n_checked": rep.n_checked, "per_draw": rep.per_draw}
        dist_lines = ["draw,line_im,max_distance"]
        for d in rep.per_draw:
            dist_lines.append(f"{d['draw']},{d['line_im']:.17g},"
                              f"{d['max_distance']:.17g}")
        (run_dir / "plotdata" / "line_distance.csv").write_text(
            "\n".join(dist_lines) + "\n")

    (run_dir / "eigenvalues.csv").write_text(_csv_rows(run_id, records))
    with open(run_dir / "results.jsonl", "w") as fh:
        for row in jsonl:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_json(run_dir / "report.json", report)

    manifest["incomplete"] = False
    _write_json(run_dir / "manifest.json", manifest)
    return run_dir


# ---------------------------------------------------------------------------
# invariant battery


def check_invariants(seed: int = 0, verbose: bool = True) -> int:
    """Cheap internal consistency battery; raises on the first failure."""
    from . import deltadesign, grushin, operators, renorm

    def ok(label: str) -> None:
        if verbose:
            print(f"[ok] {label}")

    sched = build_schedule(n=1, kappa=1.0, s=2.0, eps=0.5)
    if not (abs(sched.freq_exp - 2.0) < 1e-12
            and abs(sched.amp_exp - 2.5) < 1e-12
            and abs(sched.coupling_exp - 7.0) < 1e-12):
        raise CertificateError("schedule example produced wrong exponents")
    ok("exponent schedule example")

    ladder = renorm.band_ladder(100, 0.2, 8)
    if ladder[:6] != [100, 80, 64, 51, 40, 32] or ladder[-1] != 0:
        raise CertificateError(f"band ladder arithmetic broke: {ladder[:8]}")
    ok("stage ladder arithmetic")

    rng = np.random.default_rng(seed)
    for _ in range(20):
        a = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
        gd = grushin.build_grushin(a, tau0=None, n_border=3)
        rep = grushin.det_identity(gd)
        if not rep.finite or rep.rel_gap > 1e-8:
            raise CertificateError(
                f"determinant identity gap {rep.rel_gap:.3e}")
    ok("bordered determinant identity (20 random draws)")

    for _ in range(20):
        a = rng.standard_normal((9, 9))
        b = rng.standard_normal((9, 9))
        if grushin.singular_value_inequalities(a, b) < -1e-10:
            raise CertificateError("singular value inequality violated")
    ok("singular value inequalities (20 random pairs)")

    frame = deltadesign.fourier_frame(64, 6)
    sel = deltadesign.select_points(frame)
    if sel.log_abs_det() < sel.det_floor_log() - 1e-9:
        raise CertificateError("delta point determinant under its floor")
    ok("delta point selection floor (Fourier frame)")

    basis = operators.SpectralBasis(0.5, 2)
    ref = operators.reference_eigenbasis(basis)
    if not np.allclose(ref.mu, [0.0, 0.5, 0.5, 1.0, 1.0]):
        raise CertificateError("reference eigenvalue ladder wrong")
    nrm = operators.sobolev_norm(np.array([1.0, 1.0]),
                                 np.array([0.0, 1.0]), 1.0)
    if abs(nrm - np.sqrt(3.0)) > 1e-12:
        raise CertificateError("sobolev norm example wrong")
    ok("reference ladder and sobolev norm examples")
    return 0


# ---------------------------------------------------------------------------
# report printing


def print_report(run_dir) -> int:
    run_dir = Path(run_dir)
    man_path = run_dir / "manifest.json"
    if not man_path.exists():
        raise RefusalError(f"{run_dir} has no manifest.json")
    man = json.loads(man_path.read_text())
    print(f"run {man['run']}  (kind={man['kind']}, seed={man['seed']}, "
          f"version={man['version']})")
    if man.get("incomplete"):
        print("status: INCOMPLETE (interrupted before all artifacts)")
        return 3
    rep = json.loads((run_dir / "report.json").read_text())
    if rep["kind"] == "weyl":
        print(f"h = {rep['h']:.6g}   delta = {rep['delta']:.6g}   "
              f"(paper-scale delta would be {rep['delta_paper']:.3e})")
        print(f"phase-space prediction: {rep['weyl_term']:.4f}  "
              f"(volume {rep['volume']:.6f} +- {rep['volume_error']:.2e})")
        print(f"perturbed counts: {rep['counts']}")
        print(f"control count: {rep['control_count']}  "
              f"(deviation {rep['control_deviation']:+.2f})")
        print(f"fraction within {rep['tolerance']:.0%}: "
              f"{rep['fraction_within']:.2f}")
        print(f"fraction within shaped budget: "
              f"{rep['fraction_within_budget']:.2f}")
        print("boundary growth exponents: "
              + ", ".join(f"{k:.3f}" for k in rep["kappa_boundary"]))
    else:
        print(f"line Im = {rep['line_im']:.8f}")
        print(f"max distance to line: {rep['max_distance']:.3e} "
              f"over {rep['n_checked']} eigenvalues")
    print("status: complete")
    return 0


_MODULE_TOPICS = [
    ("symbols", "phase-space models, region volumes, shifted comparison "
                "symbol, log-potential and its pushforward check"),
    ("operators", "Fourier collocation matrices, reference eigenbasis, "
                  "Sobolev norms, relative operator"),
    ("perturbation", "exponent schedule, coefficient laws, admissible "
                     "random potentials, seeded streams"),
    ("deltadesign", "near-delta node systems, determinant floors, "
                    "coupling matrices, truncation remainders"),
    ("grushin", "bordered systems, determinant identities, singular value "
                "transfer, corner series"),
    ("renorm", "iterative stage construction with floor certificates"),
    ("stochastics", "relative determinant on random lines, zero counting, "
                    "small-value measure, failure probability"),
    ("experiments", "eigenvalue counts against the volume prediction, "
                    "first-order line model, contour counts"),
    ("cli_config", "config validation, run orchestration, artifact layout"),
]


def print_paper_map() -> int:
    width = max(len(m) for m, _ in _MODULE_TOPICS)
    for mod, topic in _MODULE_TOPICS:
        print(f"weyllab.{mod:<{width}}  {topic}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="weyllab",
        description="spectral counting laboratory for perturbed "
                    "non-self-adjoint models",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="execute a TOML-configured experiment")
    p_run.add_argument("config", help="path to the TOML config")
    p_run.add_argument("--out", default=None,
                       help="output root (default: [output].dir or ./runs)")

    p_chk = sub.add_parser("check-invariants",
                           help="run the internal consistency battery")
    p_chk.add_argument("--seed", type=int, default=0)

    p_rep = sub.add_parser("report", help="summarize a finished run")
    p_rep.add_argument("run_dir")

    sub.add_parser("paper-map", help="module-to-topic table")

    args = ap.parse_args(argv)
    try:
        if args.cmd == "run":
            cfg, raw = load_config(args.config)
            run_dir = orchestrate(cfg, raw, args.out)
            print(f"run complete: {run_dir}")
            return 0
        if args.cmd == "check-invariants":
            return check_invariants(args.seed)
        if args.cmd == "report":
            return print_report(args.run_dir)
        if args.cmd == "paper-map":
            return print_paper_map()
    except WeylLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
