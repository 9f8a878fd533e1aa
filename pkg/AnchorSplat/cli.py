import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from AnchorSplat.constants import (
    MODE_2D,
    MODE_3D,
    BAD_INPUT_ERRORS,
    CameraError,
    CheckpointMismatchError
)
from AnchorSplat.run_config import RunConfig, load_config
from AnchorSplat.mesh import GlobalTransform, write_obj
from AnchorSplat.splats import seed_splats
from AnchorSplat.scene import Scene
from AnchorSplat.camera import load_cameras
from AnchorSplat.rasterizer import render
from AnchorSplat.deform_optimizer import DeformOptimizer
from AnchorSplat.attribute_baker import (
    AttributeAtlas,
    bake_all,
    refine_texture,
    tessellate_displaced,
    export_uv_mesh
)
from AnchorSplat.gradient_analysis import run_gradient_checks
from AnchorSplat.synth import cmd_synth, load_dataset, template_mesh
from AnchorSplat.scene_analysis import mesh_chamfer_distance, render_baked_mesh
from AnchorSplat.image_io import save_render, write_pfm
from AnchorSplat.logging import log_message

"""
command line entry points. every RunConfig key is also a flag:

    python anchor_splat.py synth --dataset_dir ./data
    python anchor_splat.py fit --dataset_dir ./data --output_dir ./run
    python anchor_splat.py bake --output_dir ./run
    python anchor_splat.py render --output_dir ./run --camera_index 3
    python anchor_splat.py check-gradients --trials 1000

exit codes: 0 success, 1 failure, 2 bad input
"""

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_BAD_INPUT = 2


def initial_scene(config, dataset):
    template = dataset.template if dataset.template is not None else template_mesh(config)
    transform = GlobalTransform()
    splat_set = seed_splats(
        template, config.splats_per_face, MODE_2D, transform)
    return Scene(template, transform, splat_set)


def cmd_fit(config):
    dataset = load_dataset(config.dataset_dir)
    output_dir = Path(config.output_dir)
    config.snapshot(output_dir)

    scene = initial_scene(config, dataset)
    scene.save(output_dir / 'initial')

    reference_normals = None
    if config.normal_reference == 'external':
        if any(normal is None for normal in dataset.normals):
            raise CameraError("external normal reference needs normals/*.pfm")
        reference_normals = dataset.normals

    rng = np.random.default_rng(config.seed)
    initial_chamfer = None
    if dataset.target is not None:
        initial_chamfer = mesh_chamfer_distance(
            scene.world_vertices(), scene.mesh.faces,
            dataset.target.vertices, dataset.target.faces, rng)

    optimizer = DeformOptimizer(
        scene, dataset.cameras, dataset.images, config,
        output_dir=output_dir, reference_normals=reference_normals)
    scene = optimizer.fit()

    world = scene.world_mesh()
    write_obj(output_dir / 'final_mesh.obj', world.vertices, world.faces)

    if initial_chamfer is not None:
        final_chamfer = mesh_chamfer_distance(
            scene.world_vertices(), scene.mesh.faces,
            dataset.target.vertices, dataset.target.faces, rng)
        improvement = 1.0 - final_chamfer / max(initial_chamfer, 1e-30)
        log_message(
            "chamfer distance", "%.6g" % initial_chamfer, "->",
            "%.6g" % final_chamfer, "improvement", "%.1f%%" % (100 * improvement))
    return scene


def checkpoint_dir(config, checkpoint):
    if checkpoint is not None:
        return Path(checkpoint)
    return Path(config.output_dir) / 'final'


def cmd_bake(config, checkpoint=None, refine=True):
    scene = Scene.load(checkpoint_dir(config, checkpoint))
    output_dir = Path(config.output_dir) / 'atlas'

    atlas = bake_all(
        scene,
        texel_size=config.texel_size,
        atlas_width=config.atlas_width,
        sort=config.bake_sort,
        world_space_normals=config.world_space_normals)

    if refine and config.dataset_dir and config.refine_iterations > 0:
        dataset = load_dataset(config.dataset_dir)
        atlas, _ = refine_texture(
            atlas, scene, dataset.cameras, dataset.images,
            iterations=config.refine_iterations,
            learning_rate=config.refine_lr)

    atlas.write(output_dir)
    export_uv_mesh(output_dir / 'mesh_uv.obj', scene.mesh, scene.transform,
                   atlas.chart_table)
    vertices, faces, uvs, _, _ = tessellate_displaced(
        scene.mesh, scene.transform, atlas, config.tessellation_level)
    write_obj(output_dir / 'mesh_displaced.obj', vertices, faces, uvs, faces)
    return atlas


def cmd_render(config, camera_index=0, source='splats', mode=None,
               checkpoint=None, cameras_file=None):
    scene = Scene.load(checkpoint_dir(config, checkpoint))
    if cameras_file is None:
        cameras_file = Path(config.dataset_dir) / 'cameras.json'
    cameras = load_cameras(cameras_file)
    if not 0 <= camera_index < len(cameras):
        raise CameraError(
            "camera index " + str(camera_index) + " out of range, " +
            str(len(cameras)) + " cameras")
    camera = cameras[camera_index]

    output_dir = Path(config.output_dir) / 'renders'
    output_dir.mkdir(parents=True, exist_ok=True)
    name = source + '_%03d' % camera_index

    if source == 'baked':
        atlas = AttributeAtlas.load(Path(config.output_dir) / 'atlas')
        if len(atlas.chart_table) != scene.mesh.number_of_faces:
            raise CheckpointMismatchError(
                "atlas has " + str(len(atlas.chart_table)) + " charts, mesh has " +
                str(scene.mesh.number_of_faces) + " faces")
        color, alpha = render_baked_mesh(
            scene.mesh, scene.transform, atlas, camera, config.tessellation_level)
        save_render(output_dir / (name + '.png'), color, alpha)
        return color, alpha

    output = render(scene.splat_set, scene.mesh, scene.transform, camera,
                    mode=mode, blur=config.blur)
    save_render(output_dir / (name + '.png'), output.color, output.alpha)
    write_pfm(output_dir / (name + '_depth.pfm'), output.depth)
    if output.normal is not None:
        write_pfm(output_dir / (name + '_normal.pfm'), output.normal)
    return output.color, output.alpha


def cmd_check_gradients(trials=1000, seed=0, report_file=None):
    report = run_gradient_checks(trials=trials, seed=seed)
    if report_file is not None:
        report.write(report_file)
    for result in report.results:
        log_message(
            ('PASS' if result.passed else 'FAIL'), result.name,
            "worst", "%.3e" % result.worst)
    return report.all_passed()


def build_parser():
    parser = argparse.ArgumentParser(
        prog='anchor_splat',
        description="mesh anchored splats: fit, bake and inspect")
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_config_flags(subparser):
        subparser.add_argument('--config', default=None,
                               help="flat key = value config file")
        for key in RunConfig.keys():
            subparser.add_argument('--' + key, default=None, dest='config_' + key)

    synth = subparsers.add_parser('synth', help="render a synthetic dataset")
    add_config_flags(synth)

    fit = subparsers.add_parser('fit', help="optimize mesh and splats")
    add_config_flags(fit)

    bake = subparsers.add_parser('bake', help="bake the attribute atlas")
    add_config_flags(bake)
    bake.add_argument('--checkpoint', default=None)
    bake.add_argument('--no_refine', action='store_true')

    render_parser = subparsers.add_parser('render', help="render one view")
    add_config_flags(render_parser)
    render_parser.add_argument('--checkpoint', default=None)
    render_parser.add_argument('--cameras', default=None)
    render_parser.add_argument('--camera_index', type=int, default=0)
    render_parser.add_argument('--source', choices=['splats', 'baked'], default='splats')
    render_parser.add_argument('--mode', choices=[MODE_2D, MODE_3D], default=None)

    check = subparsers.add_parser('check-gradients', help="analytic gradient checks")
    check.add_argument('--trials', type=int, default=1000)
    check.add_argument('--seed', type=int, default=0)
    check.add_argument('--report', default=None)

    return parser


def config_from_args(args):
    overrides = {}
    for key, value in vars(args).items():
        if key.startswith('config_') and value is not None:
            overrides[key[len('config_'):]] = value
    return load_config(args.config, overrides)


def run(args):
    if args.command == 'check-gradients':
        return EXIT_SUCCESS if cmd_check_gradients(
            args.trials, args.seed, args.report) else EXIT_FAILURE

    config = config_from_args(args)
    if args.command == 'synth':
        cmd_synth(config)
    elif args.command == 'fit':
        cmd_fit(config)
    elif args.command == 'bake':
        cmd_bake(config, args.checkpoint, refine=not args.no_refine)
    elif args.command == 'render':
        cmd_render(config, args.camera_index, args.source, args.mode,
                   args.checkpoint, args.cameras)
    return EXIT_SUCCESS


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except BAD_INPUT_ERRORS as e:
        log_message("bad input:", type(e).__name__, str(e))
        return EXIT_BAD_INPUT
    except Exception as e:
        log_message("failed:", type(e).__name__, str(e))
        traceback.print_exc(file=sys.stderr)
        return EXIT_FAILURE
