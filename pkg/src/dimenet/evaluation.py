"""Reprojection-error reduction metrics, per-dataset evaluation and the ablation sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBaseline, DimeError
from .features import FEATURE_MASKS, GridConfig, build_point_features, gridify
from .geometry import DEFAULT_PNP, PnpConfig, mle_refine_intrinsics, reprojection_errors, solve_pnp
from .mlp import MLP
from .training import infer_k

log = logging.getLogger(__name__)

FRAME_FIELDS = ("frame", "n_points", "avg_ec", "avg_e", "avg_estar", "rho", "gamma", "eta")


def rho(avg_ec: float, avg_e: float, avg_estar: float) -> float:
    """Reprojection-error reduction ratio.

    1 means the predicted K is as good as the per-frame MLE, 0 means no better
    than the prior. Not clamped.
    """
    if not avg_ec > avg_estar + 1e-12:
        raise DegenerateBaseline(f"Avg(e_c)={avg_ec!r} does not exceed Avg(e*)={avg_estar!r}")
    return (avg_ec - avg_e) / (avg_ec - avg_estar)


def _rho_or_nan(ec, e, es):
    try:
        return rho(ec, e, es)
    except DegenerateBaseline:
        return float("nan")


@dataclass
class EvalReport:
    frames: list = field(default_factory=list)  # dicts keyed by FRAME_FIELDS
    aggregate: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)  # (frame index, reason)

    @property
    def rho(self) -> float:
        return self.aggregate.get("rho", float("nan"))

    @property
    def avg_e(self) -> float:
        return self.aggregate.get("avg_e", float("nan"))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregate": self.aggregate,
            "skipped": [list(s) for s in self.skipped],
            "frames": self.frames,
        }

    def to_json(self) -> str:
        # undefined ρ values are written as NaN, as Python's json module does
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FRAME_FIELDS)
        for f in self.frames:
            w.writerow([repr(f[k]) if isinstance(f[k], float) else f[k] for k in FRAME_FIELDS])
        a = self.aggregate
        w.writerow(["all", a.get("n_points", "")] + [repr(a[k]) for k in FRAME_FIELDS[2:]])
        return buf.getvalue()

    def summary(self) -> str:
        a = self.aggregate
        lines = [
            f"frames evaluated   {a.get('n_frames', 0)} (skipped {len(self.skipped)})",
            f"Avg(e_c)           {a.get('avg_ec', float('nan')):.4f} px",
            f"Avg(e)             {a.get('avg_e', float('nan')):.4f} px",
            f"Avg(e*)            {a.get('avg_estar', float('nan')):.4f} px",
            f"rho                {a.get('rho', float('nan')):.4f}" + ("  [outside 0..1]" if a.get("rho_flagged") else ""),
            f"gamma / eta        {a.get('gamma', float('nan')):.4f} / {a.get('eta', float('nan')):.4f}",
        ]
        return "\n".join(lines)

    def write(self, path_stem) -> tuple:
        """Write ``<stem>.json`` and ``<stem>.csv``; returns both paths."""
        stem = str(path_stem)
        for suffix in (".json", ".csv"):
            if stem.endswith(suffix):
                stem = stem[: -len(suffix)]
        with open(stem + ".json", "w") as fh:
            fh.write(self.to_json())
        with open(stem + ".csv", "w", newline="") as fh:
            fh.write(self.to_csv())
        return stem + ".json", stem + ".csv"


def _frame_eta(frame) -> float:
    rec = getattr(frame, "noise", None)
    if rec is None:
        return 0.0
    return float(rec.get("eta", 0.0) if isinstance(rec, dict) else rec.eta)


def evaluate_frame(model: MLP | None, frame, grid: GridConfig, cfg: PnpConfig = DEFAULT_PNP) -> dict:
    """Metrics for one frame (anything with ``corrs`` in {C0} and ``kc``)."""
    kc, corrs = frame.kc, frame.corrs
    ec = reprojection_errors(kc, solve_pnp(kc, corrs, cfg), corrs, cfg)[1]
    if model is None:
        e = ec
    else:
        k_hat = infer_k(model, kc, corrs, grid)
        e = reprojection_errors(k_hat, solve_pnp(k_hat, corrs, cfg), corrs, cfg)[1]
    es = mle_refine_intrinsics(kc, corrs, cfg)[2]
    fmap = gridify(build_point_features(kc, corrs), grid)
    return {
        "n_points": len(corrs),
        "avg_ec": float(ec),
        "avg_e": float(e),
        "avg_estar": float(es),
        "rho": float(_rho_or_nan(ec, e, es)),
        "gamma": fmap.occupancy_count / grid.n_cells,
        "eta": _frame_eta(frame),
    }


def evaluate(model: MLP | None, dataset, grid: GridConfig = GridConfig(), cfg: PnpConfig = DEFAULT_PNP, config=None) -> EvalReport:
    """Evaluate ``model`` (``None`` keeps K_c) on every frame of ``dataset``.

    Frames that fail numerically are logged and skipped. The aggregate ρ is
    computed from the three dataset-level averages.
    """
    if model is not None and model.layer_dims[0] != grid.feature_dim:
        raise ValueError(f"model expects {model.layer_dims[0]} inputs, grid {grid.label()} gives {grid.feature_dim}")
    report = EvalReport(config=dict(config or {}))
    report.config.setdefault("grid", grid.label())
    for i, frame in enumerate(dataset):
        try:
            row = evaluate_frame(model, frame, grid, cfg)
        except (DimeError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("frame %d skipped: %s", i, exc)
            report.skipped.append((i, f"{type(exc).__name__}: {exc}"))
            continue
        report.frames.append({"frame": i, **row})
    if report.frames:
        cols = {k: float(np.mean([f[k] for f in report.frames])) for k in FRAME_FIELDS[2:] if k != "rho"}
        r = _rho_or_nan(cols["avg_ec"], cols["avg_e"], cols["avg_estar"])
        report.aggregate = {
            "n_frames": len(report.frames),
            "n_points": float(np.mean([f["n_points"] for f in report.frames])),
            **cols,
            "rho": float(r),
            "rho_flagged": bool(np.isfinite(r) and not 0.0 <= r <= 1.0),
        }
    else:
        report.aggregate = {"n_frames": 0}
    report.aggregate["skipped"] = len(report.skipped)
    return report


# --------------------------------------------------------------------------- ablation

ABLATION_GRIDS = ("16x12", "12x9", "8x6")
ABLATION_ETAS = (0.0, 0.2, 0.4, 0.6, 0.8)
ABLATION_MASKS = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class AblationSpec:
    grids: tuple = ABLATION_GRIDS
    etas: tuple = ABLATION_ETAS
    masks: tuple = ABLATION_MASKS
    mask_grid: str = "8x6"
    seed: int = 0


def _gap_row(**keys):
    return {**keys, "avg_ec": float("nan"), "avg_e": float("nan"), "avg_estar": float("nan"),
            "rho": float("nan"), "gamma": float("nan"), "eta": float("nan"), "gap": True}


def _row(report: EvalReport, **keys):
    a = report.aggregate
    if not a.get("n_frames"):
        return _gap_row(**keys)
    return {**keys, **{k: a[k] for k in ("avg_ec", "avg_e", "avg_estar", "rho", "gamma", "eta")}, "gap": False}


def run_ablation(spec: AblationSpec, test_frames, models: dict, cfg: PnpConfig = DEFAULT_PNP) -> list:
    """Evaluate pre-trained models over the grid x η sweep and the feature-mask variants.

    ``models`` maps ``("grid", "8x6")`` and ``("mask", "A")`` keys to trained
    models. Missing entries become gap rows with NaN metrics. Cells are dropped
    from the test frames with a seeded RNG per (grid, η).
    """
    from .simulator import drop_cells

    frames = list(test_frames)
    rows = []
    for gi, label in enumerate(spec.grids):
        grid = GridConfig.parse(label)
        model = models.get(("grid", label))
        for ei, eta in enumerate(spec.etas):
            if model is None:
                rows.append(_gap_row(kind="grid", grid=label, eta_target=eta))
                continue
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, gi, ei]))
            dropped = [drop_cells(f, grid, eta, rng) if eta > 0 else f for f in frames]
            rows.append(_row(evaluate(model, dropped, grid, cfg), kind="grid", grid=label, eta_target=eta))
    grid = GridConfig.parse(spec.mask_grid)
    for name in spec.masks:
        if name not in FEATURE_MASKS:
            raise ValueError(f"unknown feature mask {name!r}")
        model = models.get(("mask", name))
        if model is None:
            rows.append(_gap_row(kind="mask", grid=spec.mask_grid, mask=name))
            continue
        rows.append(_row(evaluate(model, frames, grid, cfg), kind="mask", grid=spec.mask_grid, mask=name))
    return rows


def ablation_table(rows) -> str:
    """Human-readable table of :func:`run_ablation` rows."""
    out = [f"{'kind':<5} {'grid':<6} {'eta/mask':<9} {'Avg(e)':>8} {'rho':>7} {'gamma':>6}"]
    for r in rows:
        key = r.get("mask") if r["kind"] == "mask" else f"{r['eta_target']:.1f}"
        if r["gap"]:
            out.append(f"{r['kind']:<5} {r['grid']:<6} {key:<9} {'gap':>8}")
        else:
            out.append(f"{r['kind']:<5} {r['grid']:<6} {key:<9} {r['avg_e']:8.4f} {r['rho']:7.3f} {r['gamma']:6.3f}")
    return "\n".join(out)


def ablation_to_csv(rows) -> str:
    cols = ("kind", "grid", "eta_target", "mask", "avg_ec", "avg_e", "avg_estar", "rho", "gamma", "eta", "gap")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
    return buf.getvalue()
