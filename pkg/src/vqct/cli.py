"""Command line interface: analysis runs, phantom generation, studies, serving."""

from __future__ import annotations

import csv
import json
import os
import sys

import click

from .phantom import PhantomSpec, add_noise, generate_phantom
from .pipeline import (PipelineConfig, run_accuracy_study, run_pipeline,
                       run_precision_study)
from .presegment import SeedSet
from .volgrid import load_volume, write_mask, write_volume


def _load_config(path):
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_dict(json.load(fh))


def _load_spec(path):
    if path is None:
        return PhantomSpec()
    with open(path) as fh:
        return PhantomSpec.from_dict(json.load(fh))


def _echo_progress(msg):
    click.echo("  [stage] %s" % msg, err=True)


@click.group()
def main():
    """Volumetric QCT analysis of lumbar vertebral bodies."""


@main.command("run")
@click.option("--volume", "volume_path", required=True, type=click.Path(exists=True))
@click.option("--seeds", "seeds_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--parallel/--no-parallel", default=False)
@click.option("--quiet", is_flag=True)
def run_cmd(volume_path, seeds_path, config_path, out_dir, parallel, quiet):
    """Analyze a volume with operator seeds; write masks and report.json."""
    vol = load_volume(volume_path)
    with open(seeds_path) as fh:
        seeds = SeedSet.from_dict(json.load(fh))
    config = _load_config(config_path)
    if parallel:
        from dataclasses import replace
        config = replace(config, parallel=True)
    progress = None if quiet else _echo_progress
    result = run_pipeline(vol, seeds, config, out_dir=out_dir,
                          progress=progress)
    for lv in result.levels:
        status = "failed: %s" % lv.error if lv.error else "ok"
        click.echo("%s: %s" % (lv.name, status))
    sys.exit(1 if result.failed else 0)


@main.group()
def phantom():
    """Digital spine phantom."""


@phantom.command("generate")
@click.option("--spec", "spec_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def phantom_generate(spec_path, out_dir):
    """Write the phantom volume, truth masks, seeds and truth.json."""
    spec = _load_spec(spec_path)
    vol, truth = generate_phantom(spec)
    if spec.noise_sigma > 0:
        vol = add_noise(vol, spec.noise_sigma, spec.rng_seed)
    os.makedirs(out_dir, exist_ok=True)
    write_volume(vol, os.path.join(out_dir, "phantom.vqh"))
    truth_doc = {"levels": [], "spec": spec.to_dict()}
    for lv in truth.levels:
        write_mask(lv.body, os.path.join(out_dir, "%s_truth_body.vqh" % lv.name))
        write_mask(lv.trabecular,
                   os.path.join(out_dir, "%s_truth_trabecular.vqh" % lv.name))
        truth_doc["levels"].append({
            "name": lv.name,
            "nominal_trabecular_bmd": lv.nominal_bmd,
            "analytic_body_volume_mm3": lv.analytic_volume_mm3,
            "center_mm": [float(v) for v in lv.center],
            "body_height_mm": lv.body_height,
            "canal_points_mm": [[float(v) for v in p] for p in lv.canal_points],
            "pedicle_midpoints_mm": [[float(v) for v in p]
                                     for p in lv.pedicle_midpoints],
        })
    truth_doc["disk_planes"] = [
        {"normal": [float(v) for v in p.normal], "offset_mm": p.offset}
        for p in truth.disk_planes]
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth_doc, fh, sort_keys=True, indent=2)
    with open(os.path.join(out_dir, "seeds.json"), "w") as fh:
        json.dump(truth.seed_dict(), fh, sort_keys=True, indent=2)
    click.echo("phantom written to %s" % out_dir)


@main.group()
def study():
    """Phantom accuracy and precision studies."""


@study.command("accuracy")
@click.option("--spec", "spec_path", type=click.Path(exists=True))
@click.option("--noise-factors", default="0,1,2,4", show_default=True)
@click.option("--repeats", default=3, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def study_accuracy(spec_path, noise_factors, repeats, config_path, out_dir):
    """Accuracy errors vs nominal values over a noise ladder."""
    spec = _load_spec(spec_path)
    factors = [float(f) for f in noise_factors.split(",")]
    table = run_accuracy_study(spec, factors, repeats,
                               config=_load_config(config_path),
                               progress=_echo_progress)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "accuracy.json"), "w") as fh:
        json.dump(table, fh, sort_keys=True, indent=2)
    with open(os.path.join(out_dir, "accuracy.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "quantity"]
                        + ["noise_x%g" % f for f in table["noise_factors"]])
        for row in table["rows"]:
            writer.writerow([row["level"], row["quantity"]]
                            + ["%.4f" % e for e in row["errors_percent"]])
    click.echo("accuracy study written to %s" % out_dir)


@study.command("precision")
@click.option("--spec", "spec_path", type=click.Path(exists=True))
@click.option("--jitter", default=2.0, show_default=True)
@click.option("--subjects", default=5, show_default=True)
@click.option("--repeats", default=3, show_default=True)
@click.option("--noise-factor", default=1.0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def study_precision(spec_path, jitter, subjects, repeats, noise_factor,
                    config_path, out_dir):
    """%CV precision with seed jitter standing in for operator variation."""
    spec = _load_spec(spec_path)
    summary = run_precision_study(spec, jitter, subjects, repeats,
                                  noise_factor,
                                  config=_load_config(config_path),
                                  progress=_echo_progress)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "precision.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    click.echo("precision study written to %s" % out_dir)


@main.command("serve")
@click.option("--volume", "volume_path", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
def serve_cmd(volume_path, port, host, config_path):
    """Serve the operator HTTP API for the slice viewer."""
    import uvicorn

    from .server import create_app
    app = create_app(load_volume(volume_path), _load_config(config_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
