"""Coarse-to-fine orchestration of the full vertebral analysis.

Stage order per level: constraints (canal, disk planes, search box) ->
balloon -> grey-value model -> volume growing with closing/filling ->
pedicle dissection -> trabecular peeling -> vertebral coordinate system
-> VOIs -> measurement.  Per-level failures are recorded and the other
levels complete.  All randomness used by the study drivers flows from a
single master seed, and identical inputs produce byte-identical reports.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import anatomy, classify, morphops, report as report_mod
from .balloon import BalloonParams, run_balloon, voxelize_closed_mesh
from .errors import VqctError
from .phantom import PhantomSpec, add_noise, generate_phantom
from .presegment import (CanalParams, DiskPlaneParams, SearchRegionParams,
                         SeedSet, build_search_region, detect_canal,
                         estimate_body_radius, fit_disk_planes)
from .volgrid import Mask, Volume, write_mask


@dataclass(frozen=True)
class PipelineConfig:
    balloon: BalloonParams = field(default_factory=BalloonParams)
    canal: CanalParams = field(default_factory=CanalParams)
    disk: DiskPlaneParams = field(default_factory=DiskPlaneParams)
    region: SearchRegionParams = field(default_factory=SearchRegionParams)
    delta_low: float = None          # None: half the smaller fitted sigma
    delta_high: float = None
    neighborhood_radius: int = 1
    closing_radius_mm: float = 2.0
    peel_depth_mm: float = 2.0
    max_strip_mm: float = 5.0
    voi_radius_fraction: float = 0.6
    voi_height_fraction: float = 0.5
    balloon_init_factor: float = 0.7     # of the body radius estimate
    balloon_subdivisions: int = 2
    dissect_margin_factor: float = 1.2   # wide-region radius margin
    master_seed: int = 1234
    parallel: bool = False
    dump_artifacts: bool = False

    @classmethod
    def from_dict(cls, payload):
        groups = {"balloon": BalloonParams, "canal": CanalParams,
                  "disk": DiskPlaneParams, "region": SearchRegionParams}
        kwargs = {}
        for key, value in payload.items():
            if key in groups:
                if key == "canal" and "posterior_dir" in value:
                    value = dict(value,
                                 posterior_dir=tuple(value["posterior_dir"]))
                kwargs[key] = groups[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


@dataclass
class LevelResult:
    name: str
    error: str = None
    region = None
    wide_region = None
    fit = None
    band = None
    balloon = None
    body = None
    trabecular = None
    cylinder = None
    pacman = None
    landmarks = None
    vcs = None
    stats: dict = field(default_factory=dict)
    body_volume_mm3: float = None
    dissection = None


@dataclass
class PipelineResult:
    levels: list
    canal: np.ndarray
    planes: list
    report: dict

    @property
    def failed(self):
        return any(lv.error for lv in self.levels)

    def report_json(self):
        return json.dumps(self.report, sort_keys=True, indent=2) + "\n"


def _segment_level(vol, seeds, i, canal, planes, r_est, config, progress):
    """Stages from constraint box to trabecular mask for one level."""
    out = LevelResult(name=seeds.seeds[i].name)
    seed = seeds.seeds[i].center
    progress("L%d constraints" % (i + 1))
    region = build_search_region(seed, canal, planes[i], planes[i + 1],
                                 r_est[i], config.region)
    k = int(np.argmin(np.abs(canal[:, 2] - seed[2])))
    d_canal = float(np.linalg.norm(canal[k] - seed))
    wide = region.with_radius(d_canal + config.dissect_margin_factor * r_est[i])
    out.region, out.wide_region = region, wide

    progress("L%d grey-value model" % (i + 1))
    fit = classify.fit_two_gaussians(vol, region)
    band = classify.ThresholdBand.from_fit(fit, config.delta_low,
                                           config.delta_high)
    out.fit, out.band = fit, band

    progress("L%d balloon" % (i + 1))
    balloon_res = run_balloon(
        vol, region, seed, config.balloon,
        init_radius=config.balloon_init_factor * r_est[i],
        subdivisions=config.balloon_subdivisions)
    out.balloon = balloon_res
    if balloon_res.diverged:
        raise VqctError("balloon diverged")
    surface, interior = voxelize_closed_mesh(balloon_res.mesh, vol)

    progress("L%d volume growing" % (i + 1))
    bones = classify.bone_map(vol, band, config.neighborhood_radius)
    seed_voxels = np.argwhere(surface.bits & bones & wide.voxel_mask(vol).bits)
    if len(seed_voxels) == 0:
        raise VqctError("no bone-classified voxels on the balloon surface")
    grown = morphops.volume_grow(vol, seed_voxels, band, wide)
    # growing complements the balloon result: it adds the surface points
    # the smoothed balloon could not catch, it does not replace the coarse
    # segmentation
    union = Mask(vol.dims, vol.spacing, vol.origin,
                 grown.bits | interior.bits)
    closed = morphops.close_and_fill(union, config.closing_radius_mm)
    closed = morphops.largest_component(closed)

    progress("L%d pedicle cut" % (i + 1))
    cut = morphops.pedicle_cut(closed)
    out.dissection = cut
    out.body = cut.body
    out.body_volume_mm3 = cut.body.count * cut.body.voxel_volume

    progress("L%d trabecular peel" % (i + 1))
    out.trabecular = morphops.trabecular_peel(
        cut.body, vol, band, config.peel_depth_mm, config.max_strip_mm)
    return out


def _analyze_level(vol, out: LevelResult, canal, spline, config, progress):
    """VCS, VOIs and measurements once every body mask exists."""
    progress("%s coordinate system" % out.name)
    cov = anatomy.centre_of_volume(out.body)
    m3 = out.dissection.m3
    m4 = out.dissection.m4 if out.dissection.m4 is not None else out.dissection.m3
    landmarks, vcs = anatomy.compute_vcs(cov, canal, spline, m3, m4)
    out.landmarks, out.vcs = landmarks, vcs

    progress("%s VOIs" % out.name)
    cyl_spec = anatomy.VoiSpec("cylinder", config.voi_radius_fraction,
                               config.voi_height_fraction)
    pac_spec = anatomy.VoiSpec("pacman", config.voi_radius_fraction,
                               config.voi_height_fraction)
    out.cylinder = anatomy.make_voi(vcs, cyl_spec, out.body)
    out.pacman = anatomy.make_voi(vcs, pac_spec, out.body,
                                  landmarks.m3, landmarks.m4)

    progress("%s measurement" % out.name)
    out.stats = {
        "total_trabecular": report_mod.measure_voi(vol, out.trabecular,
                                                   "total_trabecular"),
        "cylinder": report_mod.measure_voi(vol, out.cylinder, "cylinder"),
        "pacman": report_mod.measure_voi(vol, out.pacman, "pacman"),
    }


def _level_report(out: LevelResult):
    if out.error is not None:
        return {"error": out.error}
    fit = out.fit
    return {
        "error": None,
        "landmarks": {k.upper(): v for k, v in out.landmarks.to_dict().items()},
        "vcs_axes": out.vcs.to_dict(),
        "vois": {name: st.to_dict() for name, st in out.stats.items()},
        "body_volume_mm3": out.body_volume_mm3,
        "fit": {
            "w": [fit.w1, fit.w2], "mu": [fit.mu1, fit.mu2],
            "sigma": [fit.sigma1, fit.sigma2],
            "x_star": out.band.x_star, "low": out.band.low,
            "high": out.band.high,
        },
        "balloon": out.balloon.summary(),
        "dissection": {
            "n_cut_components": out.dissection.n_cut_components,
            "erosion_threshold_mm": out.dissection.threshold,
        },
    }


def run_pipeline(vol: Volume, seeds: SeedSet,
                 config: PipelineConfig = PipelineConfig(),
                 out_dir=None, progress=None) -> PipelineResult:
    """Run the whole analysis; per-level failures do not stop other levels."""
    notify = progress if progress is not None else (lambda stage: None)

    notify("canal detection")
    canal = detect_canal(vol, seeds, config.canal)
    r_est = [estimate_body_radius(vol, s.center,
                                  config.canal.coarse_bone_threshold)
             for s in seeds]
    notify("disk planes")
    planes = fit_disk_planes(vol, seeds, config.disk, r_est)

    levels = [None] * len(seeds)

    def segment(i):
        try:
            return _segment_level(vol, seeds, i, canal, planes, r_est,
                                  config, notify)
        except Exception as exc:  # noqa: BLE001 - isolate level failures
            failed = LevelResult(name=seeds.seeds[i].name)
            failed.error = "%s: %s" % (type(exc).__name__, exc)
            return failed

    if config.parallel and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=len(seeds)) as pool:
            levels = list(pool.map(segment, range(len(seeds))))
    else:
        levels = [segment(i) for i in range(len(seeds))]

    good = [lv for lv in levels if lv.error is None]
    if good:
        covs = [anatomy.centre_of_volume(lv.body) for lv in good]
        spline = anatomy.fit_column_spline(covs)

        def analyze(lv):
            try:
                _analyze_level(vol, lv, canal, spline, config, notify)
            except Exception as exc:  # noqa: BLE001
                lv.error = "%s: %s" % (type(exc).__name__, exc)

        if config.parallel and len(good) > 1:
            with ThreadPoolExecutor(max_workers=len(good)) as pool:
                list(pool.map(analyze, good))
        else:
            for lv in good:
                analyze(lv)

    rep = {
        "levels": {lv.name: _level_report(lv) for lv in levels},
        "metadata": {
            "n_levels": len(levels),
            "master_seed": config.master_seed,
            "volume_dims": list(vol.dims),
            "spacing_mm": list(vol.spacing),
            "sd_convention": "sample (n-1)",
        },
    }
    result = PipelineResult(levels=levels, canal=canal, planes=planes,
                            report=rep)
    if out_dir is not None:
        _write_outputs(result, vol, config, out_dir)
    return result


def _write_outputs(result: PipelineResult, vol, config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(result.report_json())
    for lv in result.levels:
        if lv.error is not None:
            continue
        write_mask(lv.body, os.path.join(out_dir, "%s_body.vqh" % lv.name))
        write_mask(lv.trabecular,
                   os.path.join(out_dir, "%s_trabecular.vqh" % lv.name))
        write_mask(lv.cylinder,
                   os.path.join(out_dir, "%s_voi_cylinder.vqh" % lv.name))
        write_mask(lv.pacman,
                   os.path.join(out_dir, "%s_voi_pacman.vqh" % lv.name))
        if config.dump_artifacts:
            lv.balloon.mesh.write_soup(
                os.path.join(out_dir, "%s_balloon.txt" % lv.name))
            with open(os.path.join(out_dir, "%s_balloon.json" % lv.name),
                      "w") as fh:
                json.dump(lv.balloon.summary(), fh, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# study drivers
# ---------------------------------------------------------------------------

_QUANTITIES = ("BMD1", "BMD2", "BMD3", "Vol.")
_VOI_OF = {"BMD1": "total_trabecular", "BMD2": "cylinder", "BMD3": "pacman"}


def _measured(result: PipelineResult, name):
    values = {}
    for lv in result.levels:
        if lv.error is not None:
            raise VqctError("level %s failed: %s" % (lv.name, lv.error))
        if name == "Vol.":
            values[lv.name] = lv.body_volume_mm3
        else:
            values[lv.name] = lv.stats[_VOI_OF[name]].bmd_mean
    return values


def run_accuracy_study(spec: PhantomSpec, noise_factors=(0.0, 1.0, 2.0, 4.0),
                       repeats=3, config: PipelineConfig = PipelineConfig(),
                       progress=None):
    """Accuracy errors versus the phantom's nominal values.

    For every noise factor the phantom is re-noised ``repeats`` times with
    distinct seeds, analyzed, and the repeat-averaged measurements are
    compared against the nominal trabecular BMD (three VOIs) and the
    analytic body volume.  One row per (level, quantity), one column per
    noise factor.
    """
    base, truth = generate_phantom(spec)
    seeds = SeedSet.from_dict(truth.seed_dict())
    notify = progress if progress is not None else (lambda msg: None)

    per_factor = {}
    for fi, factor in enumerate(noise_factors):
        sums = {}
        for r in range(repeats):
            notify("noise factor %g, repeat %d/%d" % (factor, r + 1, repeats))
            if factor > 0:
                vol = add_noise(base, factor * spec.noise_sigma,
                                config.master_seed + 101 * fi + r)
            else:
                vol = base
            result = run_pipeline(vol, seeds, config)
            for q in _QUANTITIES:
                for name, v in _measured(result, q).items():
                    sums.setdefault((name, q), []).append(v)
            if factor == 0:
                break  # noiseless repeats are identical by determinism
        per_factor[factor] = {k: float(np.mean(v)) for k, v in sums.items()}

    nominal = {}
    for lv in truth.levels:
        for q in ("BMD1", "BMD2", "BMD3"):
            nominal[(lv.name, q)] = lv.nominal_bmd
        nominal[(lv.name, "Vol.")] = lv.analytic_volume_mm3

    rows = []
    for lv in truth.levels:
        for q in _QUANTITIES:
            key = (lv.name, q)
            rows.append({
                "level": lv.name,
                "quantity": q,
                "measured": [per_factor[f][key] for f in noise_factors],
                "errors_percent": [
                    report_mod.accuracy_error(per_factor[f][key], nominal[key])
                    for f in noise_factors],
            })
    return {"noise_factors": list(noise_factors), "rows": rows}


def run_precision_study(spec: PhantomSpec, jitter_mm=2.0, subjects=5,
                        repeats=3, noise_factor=1.0,
                        config: PipelineConfig = PipelineConfig(),
                        progress=None):
    """Operator precision simulated by independent seed jitter.

    Each subject is the phantom with its own noise realization; each
    analysis re-marks every seed with an independent uniform-ball
    perturbation of radius ``jitter_mm``.  %CV aggregates per subject over
    repeats (after averaging the levels), then by RMS over subjects.
    Landmark position spreads are reported as percent of the body height.
    """
    if jitter_mm < 0:
        raise VqctError("jitter must be non-negative")
    base, truth = generate_phantom(spec)
    notify = progress if progress is not None else (lambda msg: None)
    height = float(np.mean([lv.body_height for lv in truth.levels]))

    bmd = [[] for _ in range(subjects)]
    volume = [[] for _ in range(subjects)]
    marks = {m: [[] for _ in range(subjects)] for m in ("M1", "M2", "M3", "M4")}

    for s in range(subjects):
        vol = add_noise(base, noise_factor * spec.noise_sigma,
                        config.master_seed + 7919 * (s + 1)) \
            if noise_factor > 0 else base
        for a in range(repeats):
            notify("subject %d/%d analysis %d/%d" % (s + 1, subjects,
                                                     a + 1, repeats))
            rng = np.random.default_rng(config.master_seed
                                        + 1000 * s + 17 * a + 3)
            jittered = []
            for sd in truth.seed_dict()["levels"]:
                d = rng.normal(size=3)
                d /= np.linalg.norm(d)
                r = jitter_mm * rng.random() ** (1.0 / 3.0)
                jittered.append({"name": sd["name"],
                                 "center_mm": list(np.asarray(sd["center_mm"])
                                                   + r * d)})
            seeds = SeedSet.from_dict({"levels": jittered})
            result = run_pipeline(vol, seeds, config)
            bmd[s].append(float(np.mean(list(
                _measured(result, "BMD1").values()))))
            volume[s].append(float(np.mean(list(
                _measured(result, "Vol.").values()))))
            for name, store in marks.items():
                pts = [getattr(lv.landmarks, name.lower())
                       for lv in result.levels]
                store[s].append(np.asarray(pts))

    summary = report_mod.precision_cv({
        "trabecular_bmd": bmd,
        "body_volume": volume,
    }).to_dict()

    for name, store in marks.items():
        cvs = []
        for s in range(subjects):
            reps = np.stack(store[s])           # (repeats, levels, 3)
            mean_pos = reps.mean(axis=0)
            d2 = ((reps - mean_pos) ** 2).sum(axis=2)      # squared distances
            sd_mm = np.sqrt(d2.sum(axis=0) / (reps.shape[0] - 1)).mean()
            cvs.append(100.0 * sd_mm / height)
        rms = float(np.sqrt(np.mean(np.square(cvs))))
        sd = float(np.std(cvs, ddof=1)) if len(cvs) > 1 else 0.0
        summary["landmark_%s" % name] = {"cv_rms_percent": rms, "cv_sd": sd}
    return summary
