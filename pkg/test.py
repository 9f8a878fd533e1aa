import os
import sys
import subprocess
import csv

import numpy as np
from monty.serialization import dumpfn

from AnchorSplat.constants import (
    MODE_2D,
    MODE_3D,
    Terminal,
    AnchorSplatError,
    MeshTopologyError,
    InvalidTransformError,
    CameraError,
    ConfigError,
    CheckpointMismatchError,
    ProbeError
)
from AnchorSplat.rotations import (
    normalize,
    quaternion_to_rotation,
    rotation_to_quaternion,
    axis_angle_quaternion,
    face_frame_quaternion
)
from AnchorSplat.mesh import (
    Mesh,
    GlobalTransform,
    build_laplacian,
    icosphere,
    cube_mesh,
    tetrahedron,
    grid_patch,
    load_obj,
    write_obj
)
from AnchorSplat.camera import Camera, fibonacci_cameras, load_cameras, dump_cameras
from AnchorSplat.splats import (
    SplatSet,
    SplatGeometry,
    logit,
    seed_splats,
    reanchor_walk_batch,
    GradientAccumulator,
    densify_and_prune,
    dump_splats,
    load_splats
)
from AnchorSplat.densify_questions import (
    run_decision_tree,
    densify_decision_tree,
    changed_splats_logging_tree
)
from AnchorSplat.report_generator import ReportGenerator
from AnchorSplat.rasterizer import (
    render_2d,
    render_3d,
    brute_force_render,
    backward_appearance,
    ImageGradients
)
from AnchorSplat.losses import (
    ssim_loss,
    photo_loss,
    bilaplacian_reg,
    depth_distortion_loss
)
from AnchorSplat.deform_optimizer import (
    DiffusionOperator,
    VertexStepper,
    splat_grads_to_vertex_grads,
    realignment_targets,
    check_barycentrics
)
from AnchorSplat.gradient_analysis import (
    GradientReport,
    run_gradient_checks,
    nondegeneracy_test
)
from AnchorSplat.scene import Scene
from AnchorSplat.attribute_baker import (
    AttributeAtlas,
    bake_all,
    brute_force_bake,
    hop_limit_excess,
    face_resolutions,
    texel_barycentrics,
    refine_texture
)
from AnchorSplat.synth import TexturedMesh, load_dataset, intersect_rays
from AnchorSplat.scene_analysis import holdout_psnr, chamfer_distance
from AnchorSplat.bake_payloads import BakeDispatcherPayload, BakeWorkerPayload
from AnchorSplat.atlas_loader import AtlasLoader
from AnchorSplat.cli import main, EXIT_SUCCESS, EXIT_BAD_INPUT


# AnchorSplat is tested end to end like a pipeline, plus a set of
# smaller checks of the pieces the pipeline is built from. The first
# test walks through a complete run and doubles as documentation.

# The bake can be distributed with MPI. The MPI bake test needs at
# least two threads: one dispatcher and one worker. Passing `full`
# runs the slower, larger versions of the randomized checks.
if len(sys.argv) not in [2, 3]:
    print("usage: python test.py number_of_threads [full]")
    quit()


number_of_threads = sys.argv[1]
full = len(sys.argv) == 3 and sys.argv[2] == 'full'

class bcolors:
    PASS = '\u001b[32;1m'
    FAIL = '\u001b[31;1m'
    ENDC = '\u001b[0m'


# every test stores what it writes under ./scratch/<test name>
if os.path.isdir('./scratch'):
    subprocess.run(['rm', '-r', './scratch'])

subprocess.run(['mkdir', './scratch'])


def check(test_name, label, condition):
    if condition:
        print(bcolors.PASS + test_name + ": " + label + bcolors.ENDC)
    else:
        print(bcolors.FAIL + test_name + ": " + label + bcolors.ENDC)
    return bool(condition)


def raises(error_type, function, *args, **kwargs):
    try:
        function(*args, **kwargs)
    except error_type:
        return True
    return False


def pipeline_test():

    folder = './scratch/pipeline_test'
    subprocess.run(['mkdir', folder])
    data = folder + '/data'
    run = folder + '/run'

    # Every knob of a run lives in RunConfig. On the command line each
    # key is a flag of its own, and a flat `key = value` file can be
    # passed with --config. Here we shrink everything so the whole
    # pipeline finishes in a few minutes on one core.
    common = [
        '--dataset_dir', data,
        '--output_dir', run,
        '--image_size', '32',
        '--train_views', '6',
        '--holdout_views', '2',
        '--template_resolution', '3',
        '--splats_per_face', '2',
        '--stage_iterations', '20,10,10',
        '--densify_from', '10',
        '--densify_until', '30',
        '--densify_interval', '10',
        '--opacity_reset_interval', '1000',
        '--realign_interval', '10',
        '--log_interval', '10',
        '--checkpoint_interval', '20',
        '--texel_size', '0.1',
        '--atlas_width', '256',
        '--refine_iterations', '5',
        '--tessellation_level', '2'
    ]

    # synth ray casts a checkered sphere from cameras on a Fibonacci
    # lattice. It writes images, camera space normals, the cameras and
    # both the target and template meshes. None of this touches the
    # splat rasterizer so the images can serve as ground truth.
    synth_status = main(['synth'] + common)

    # fit seeds splats on the template (a coarse cube), then runs the
    # three stage schedule: flat splats, volumetric splats, then flat
    # splats with the normal consistency and depth distortion terms.
    # Positional gradients of the splats are pulled back onto the
    # template vertices and smoothed by (I + lambda_l L)^-2 before
    # every vertex step. The final scene goes to run/final and the
    # training curve to run/training_log.csv.
    fit_status = main(['fit'] + common)

    # bake projects the splats of each face onto a per face chart of
    # the attribute atlas: diffuse colour, tangent space normal and
    # displacement. The diffuse chart is then refined against the
    # training views.
    bake_status = main(['bake'] + common)

    # render draws one view either from the splats or from the baked,
    # displaced and textured mesh.
    render_status = main(['render'] + common + ['--camera_index', '1'])
    baked_status = main(
        ['render'] + common + ['--camera_index', '1', '--source', 'baked'])
    bad_index_status = main(
        ['render'] + common + ['--camera_index', '99'])

    tests_passed = True
    tests_passed &= check(
        'pipeline_test', "all stages exit cleanly",
        [synth_status, fit_status, bake_status, render_status, baked_status] ==
        [EXIT_SUCCESS] * 5)

    tests_passed &= check(
        'pipeline_test', "out of range camera is bad input",
        bad_index_status == EXIT_BAD_INPUT)

    expected_files = [
        data + '/cameras.json',
        data + '/holdout_cameras.json',
        data + '/images/train_000.png',
        data + '/normals/train_000.pfm',
        data + '/target.obj',
        run + '/config.json',
        run + '/final/mesh.obj',
        run + '/final/splats.txt',
        run + '/final/transform.json',
        run + '/final_mesh.obj',
        run + '/training_log.csv',
        run + '/densify_report.txt',
        run + '/atlas/diffuse.png',
        run + '/atlas/normal.png',
        run + '/atlas/displacement.pfm',
        run + '/atlas/charts.json',
        run + '/atlas/mesh_uv.obj',
        run + '/atlas/mesh_displaced.obj',
        run + '/renders/splats_001.png',
        run + '/renders/baked_001.png'
    ]
    missing = [path for path in expected_files if not os.path.exists(path)]
    tests_passed &= check(
        'pipeline_test', "every output file written", len(missing) == 0)
    if len(missing) > 0:
        print("missing:", missing)
        return False

    with open(run + '/training_log.csv') as f:
        rows = list(csv.reader(f))
    tests_passed &= check(
        'pipeline_test', "training log has rows", len(rows) > 1)

    scene = Scene.load(run + '/final')
    tests_passed &= check(
        'pipeline_test', "barycentrics stay on the simplex",
        check_barycentrics(scene.splat_set) == 0)

    atlas = AttributeAtlas.load(run + '/atlas')
    tests_passed &= check(
        'pipeline_test', "one chart per face",
        len(atlas.chart_table) == scene.mesh.number_of_faces)
    tests_passed &= check(
        'pipeline_test', "charts do not overlap",
        atlas.chart_table.overlaps() == 0)

    dataset = load_dataset(data)
    values = holdout_psnr(
        scene, atlas, dataset.holdout_cameras, dataset.holdout_images, level=2)
    tests_passed &= check(
        'pipeline_test', "held out psnr is finite",
        len(values) == 2 and np.all(np.isfinite(values)))

    return tests_passed


def mpi_bake_test():

    folder = './scratch/mpi_bake_test'
    subprocess.run(['mkdir', folder])

    if int(number_of_threads) < 2:
        print(bcolors.PASS +
              "mpi_bake_test: skipped, needs a dispatcher and a worker" +
              bcolors.ENDC)
        return True

    scene_dir = './scratch/pipeline_test/run/final'
    if not os.path.isdir(scene_dir):
        return check('mpi_bake_test', "pipeline scene available", False)

    # the bake is embarrassingly parallel over faces. The dispatcher
    # packs the charts, hands out batches of face ids and writes every
    # chart the workers send back into a sqlite database.
    dispatcher_payload = BakeDispatcherPayload(
        scene_dir,
        folder + '/charts.sqlite',
        folder + '/bake_report.tex',
        texel_size=0.1,
        atlas_width=256,
        faces_per_batch=16)

    worker_payload = BakeWorkerPayload(
        scene_dir,
        texel_size=0.1)

    dumpfn(dispatcher_payload, folder + '/dispatcher_payload.json')
    dumpfn(worker_payload, folder + '/worker_payload.json')

    subprocess.run(
        [
            'mpirun',
            '--use-hwthread-cpus',
            '-n',
            number_of_threads,
            'python',
            'run_atlas_bake.py',
            folder + '/dispatcher_payload.json',
            folder + '/worker_payload.json'
        ]
    )

    loader = AtlasLoader(folder + '/charts.sqlite')
    distributed = loader.load_atlas()
    serial = bake_all(Scene.load(scene_dir), texel_size=0.1, atlas_width=256)

    tests_passed = True
    tests_passed &= check(
        'mpi_bake_test', "chart count matches face count",
        loader.number_of_charts == loader.number_of_faces)

    difference = max(
        np.abs(distributed.diffuse - serial.diffuse).max(),
        np.abs(distributed.normal - serial.normal).max(),
        np.abs(distributed.displacement - serial.displacement).max())
    tests_passed &= check(
        'mpi_bake_test', "distributed atlas equals serial atlas",
        difference <= 1e-12)

    tests_passed &= check(
        'mpi_bake_test', "bake report written",
        os.path.exists(folder + '/bake_report.tex'))

    return tests_passed


def geometry_test():

    folder = './scratch/geometry_test'
    subprocess.run(['mkdir', folder])
    rng = np.random.default_rng(0)
    tests_passed = True

    quaternions = normalize(rng.normal(size=(100, 4)))
    rotations = quaternion_to_rotation(quaternions)
    orthonormal = np.abs(
        np.einsum('nij,nkj->nik', rotations, rotations) - np.eye(3)).max()
    tests_passed &= check(
        'geometry_test', "quaternions give rotations",
        orthonormal < 1e-12 and np.all(np.linalg.det(rotations) > 0))

    back = rotation_to_quaternion(rotations)
    sign = np.sign(np.sum(back * quaternions, axis=1))[:, None]
    tests_passed &= check(
        'geometry_test', "rotation to quaternion round trip",
        np.abs(sign * back - quaternions).max() < 1e-10)

    normals = normalize(rng.normal(size=(100, 3)))
    frames = quaternion_to_rotation(face_frame_quaternion(normals))
    tests_passed &= check(
        'geometry_test', "face frame third axis is the normal",
        np.abs(frames[:, :, 2] - normals).max() < 1e-12)

    tests_passed &= check(
        'geometry_test', "cube template face count",
        cube_mesh(11).number_of_faces == 1452)

    tetra = tetrahedron()
    tests_passed &= check(
        'geometry_test', "inward faces rejected",
        raises(MeshTopologyError, Mesh, tetra.vertices, tetra.faces[:, ::-1]))

    patch = grid_patch(4)
    tests_passed &= check(
        'geometry_test', "boundary rejected for closed templates",
        raises(MeshTopologyError, Mesh, patch.vertices, patch.faces))

    tests_passed &= check(
        'geometry_test', "non positive scale rejected",
        raises(InvalidTransformError,
               GlobalTransform((0.0, 1.0, 1.0)).apply, tetra.vertices))

    sphere = icosphere(2)
    laplacian = build_laplacian(sphere).matrix
    tests_passed &= check(
        'geometry_test', "laplacian is symmetric with zero row sums",
        abs(laplacian - laplacian.T).max() == 0 and
        np.abs(laplacian @ np.ones(sphere.number_of_vertices)).max() == 0)

    neighborhood = sphere.face_neighborhood(0, 1)
    tests_passed &= check(
        'geometry_test', "one hop neighborhood is the face and its neighbours",
        len(neighborhood) == 4 and 0 in neighborhood)

    write_obj(folder + '/sphere.obj', sphere.vertices, sphere.faces)
    vertices, faces, _, _ = load_obj(folder + '/sphere.obj')
    tests_passed &= check(
        'geometry_test', "obj round trip",
        np.array_equal(faces, sphere.faces) and
        np.abs(vertices - sphere.vertices).max() < 1e-12)

    cameras = fibonacci_cameras(5, 3.0)
    dump_cameras(cameras, folder + '/cameras.json')
    loaded = load_cameras(folder + '/cameras.json')
    tests_passed &= check(
        'geometry_test', "cameras round trip",
        all(np.abs(a.rotation - b.rotation).max() < 1e-12 and
            np.abs(a.translation - b.translation).max() < 1e-12
            for a, b in zip(cameras, loaded)))

    tests_passed &= check(
        'geometry_test', "negative focal length rejected",
        raises(CameraError, Camera, -1.0, 1.0, 8, 8, np.eye(3), np.zeros(3), 16, 16))

    return tests_passed


def splat_test():

    folder = './scratch/splat_test'
    subprocess.run(['mkdir', folder])
    rng = np.random.default_rng(1)
    tests_passed = True

    # the walk on triangles moves splats whose barycentrics left the
    # simplex onto neighbouring faces
    sphere = icosphere(3 if full else 2)
    count = 5000 if full else 500
    face_id = rng.integers(0, sphere.number_of_faces, count)
    noise = rng.normal(0.0, 0.6, (count, 3))
    beta = np.full((count, 3), 1.0 / 3.0) + noise - noise.mean(axis=1, keepdims=True)
    beta[:50] = [0.2, 0.3, 0.5]

    new_face, new_beta, overflow = reanchor_walk_batch(face_id, beta, sphere)
    tests_passed &= check(
        'splat_test', "walk lands on the simplex",
        np.all(new_beta >= 0.0) and
        np.abs(new_beta.sum(axis=1) - 1.0).max() <= 1e-12)
    tests_passed &= check(
        'splat_test', "walk keeps valid face ids",
        new_face.min() >= 0 and new_face.max() < sphere.number_of_faces)
    tests_passed &= check(
        'splat_test', "walk leaves valid splats alone",
        np.array_equal(new_face[:50], face_id[:50]) and
        np.array_equal(new_beta[:50], beta[:50]))
    print("walk overflows:", int(np.count_nonzero(overflow)), "of", count)

    patch = grid_patch(2)
    _, patch_beta, _ = reanchor_walk_batch(
        [0, 0, 3], [[1.5, -0.25, -0.25], [-2.0, 1.0, 2.0], [3.0, -1.0, -1.0]],
        patch)
    tests_passed &= check(
        'splat_test', "walk clamps at the boundary",
        np.all(patch_beta >= 0.0) and
        np.abs(patch_beta.sum(axis=1) - 1.0).max() <= 1e-12)

    centroid_face, centroid_beta, _ = reanchor_walk_batch(
        [4, 5], [[1.0, -1.0, 0.0], [0.0, 0.0, 0.0]], sphere)
    tests_passed &= check(
        'splat_test', "zero barycentric sum falls back to the centroid",
        np.array_equal(centroid_face, [4, 5]) and
        np.abs(centroid_beta - 1.0 / 3.0).max() <= 1e-15)

    cube = cube_mesh(3, 0.8)
    splat_set = seed_splats(cube, 3)
    tests_passed &= check(
        'splat_test', "seeding places splats_per_face on every face",
        len(splat_set) == 3 * cube.number_of_faces and
        np.array_equal(np.bincount(splat_set.face_id), np.full(cube.number_of_faces, 3)))
    tests_passed &= check(
        'splat_test', "seeded splats are valid",
        check_barycentrics(splat_set) == 0 and np.all(splat_set.d == 0.0))
    tests_passed &= check(
        'splat_test', "zero splats per face rejected",
        raises(ConfigError, seed_splats, cube, 0))

    dump_splats(splat_set, folder + '/splats.txt')
    loaded = load_splats(folder + '/splats.txt', cube.number_of_faces)
    tests_passed &= check(
        'splat_test', "splat checkpoint round trip",
        np.array_equal(loaded.face_id, splat_set.face_id) and
        np.abs(loaded.beta - splat_set.beta).max() < 1e-15)
    tests_passed &= check(
        'splat_test', "checkpoint for a smaller mesh rejected",
        raises(CheckpointMismatchError, load_splats, folder + '/splats.txt', 10))

    tree = densify_decision_tree(0.005, 2e-4, 0.05)
    decisions = [
        run_decision_tree(
            {'index': 0, 'opacity': 0.001, 'gradient': 1.0,
             'max_scale': 1.0, 'visible_count': 3}, {}, tree),
        run_decision_tree(
            {'index': 1, 'opacity': 0.5, 'gradient': 1.0,
             'max_scale': 1.0, 'visible_count': 0}, {}, tree),
        run_decision_tree(
            {'index': 2, 'opacity': 0.5, 'gradient': 1e-5,
             'max_scale': 1.0, 'visible_count': 3}, {}, tree),
        run_decision_tree(
            {'index': 3, 'opacity': 0.5, 'gradient': 1.0,
             'max_scale': 1.0, 'visible_count': 3}, {}, tree),
        run_decision_tree(
            {'index': 4, 'opacity': 0.5, 'gradient': 1.0,
             'max_scale': 0.01, 'visible_count': 3}, {}, tree)
    ]
    tests_passed &= check(
        'splat_test', "densification decisions",
        decisions == [Terminal.DISCARD, Terminal.KEEP, Terminal.KEEP,
                      Terminal.SPLIT, Terminal.CLONE])

    # a seen splat below the opacity threshold is pruned and its
    # decision pathway lands in the densification report
    seeded = seed_splats(cube, 1)
    seeded.opacity_logit[:] = logit(0.5)
    seeded.opacity_logit[0] = logit(0.001)
    stats = GradientAccumulator(len(seeded))
    stats.count[:] = 1
    pruned_set, _, _, logged = densify_and_prune(
        seeded, stats, 1, cube, GlobalTransform(),
        densify_decision_tree(0.005, 2e-4, 0.05), rng,
        opacity_reset_interval=0,
        logging_decision_tree=changed_splats_logging_tree(0.005, 2e-4))
    tests_passed &= check(
        'splat_test', "only the transparent splat is pruned and logged",
        len(pruned_set) == len(seeded) - 1 and
        [entry[0] for entry in logged] == [0] and
        logged[0][2][-1] == Terminal.DISCARD)

    report = ReportGenerator(folder + '/densify_report.txt')
    for index, splat, decision_pathway in logged:
        report.emit_splat(index, splat, decision_pathway)
    report.finished()
    with open(folder + '/densify_report.txt') as f:
        written = f.read()
    tests_passed &= check(
        'splat_test', "densification report lists the pathway",
        'splat 0: opacity=0.001' in written and
        str(Terminal.DISCARD) in written)

    return tests_passed


def random_splats(mesh, count, rng, mode=MODE_2D):
    seeded = seed_splats(mesh, 1, mode)
    chosen = np.sort(rng.choice(len(seeded), count, replace=False))
    splat_set = seeded.select(chosen)
    splat_set.d = rng.normal(0.0, 0.05, count)
    splat_set.q_bar = normalize(
        np.array([1.0, 0.0, 0.0, 0.0]) + rng.normal(0.0, 0.3, (count, 4)))
    splat_set.log_scale = splat_set.log_scale + np.log(2.0)
    splat_set.opacity_logit = rng.normal(0.0, 1.0, count)
    splat_set.color = rng.uniform(0.0, 1.0, (count, 3))
    return splat_set


def rasterizer_test():

    rng = np.random.default_rng(2)
    tests_passed = True
    sphere = icosphere(1)
    transform = GlobalTransform()
    camera = fibonacci_cameras(1, 3.0, width=16, height=16)[0]

    # the tiled renderer and the every splat against every pixel
    # reference agree on random scenes
    worst = 0.0
    for trial in range(10 if full else 3):
        for mode in [MODE_2D, MODE_3D]:
            splat_set = random_splats(sphere, 20, rng, mode)
            if mode == MODE_2D:
                output = render_2d(splat_set, sphere, transform, camera)
            else:
                output = render_3d(splat_set, sphere, transform, camera)
            color, depth, normal, alpha = brute_force_render(
                splat_set, sphere, transform, camera, mode)
            worst = max(
                worst,
                np.abs(output.color - color).max(),
                np.abs(output.depth - depth).max(),
                np.abs(output.alpha - alpha).max())
            if mode == MODE_2D:
                worst = max(worst, np.abs(output.normal - normal).max())

    tests_passed &= check(
        'rasterizer_test', "fast renderer matches reference renderer",
        worst <= 1e-10)

    empty = SplatSet.empty()
    output = render_2d(empty, sphere, transform, camera)
    tests_passed &= check(
        'rasterizer_test', "empty scene renders black",
        np.all(output.color == 0.0) and np.all(output.alpha == 0.0))

    splat_set = random_splats(sphere, 20, rng, MODE_3D)
    tests_passed &= check(
        'rasterizer_test', "only flat splats produce normals",
        render_3d(splat_set, sphere, transform, camera).normal is None and
        render_2d(splat_set, sphere, transform, camera).normal is not None)

    return tests_passed


def loss_test():

    rng = np.random.default_rng(3)
    tests_passed = True
    sphere = icosphere(1)
    transform = GlobalTransform()
    camera = fibonacci_cameras(1, 3.0, width=16, height=16)[0]

    # three splats facing the camera
    seeded = seed_splats(sphere, 1)
    geometry = SplatGeometry(seeded, sphere, transform)
    facing = geometry.face_normal @ normalize(camera.center)
    splat_set = seeded.select(np.argsort(-facing)[0:3])
    splat_set.log_scale = splat_set.log_scale + np.log(3.0)
    splat_set.color = rng.uniform(0.0, 1.0, (3, 3))

    # linear image loss, so finite differences of the colour gradient
    # are exact up to rounding
    weights = rng.normal(size=(16, 16, 3))

    def loss(s):
        return np.sum(weights * render_2d(s, sphere, transform, camera).color)

    output = render_2d(splat_set, sphere, transform, camera)
    image_gradients = ImageGradients.zeros(16, 16)
    image_gradients.color = weights
    gradients = backward_appearance(output.tape, image_gradients)

    step = 1e-6
    numeric_color = np.zeros((3, 3))
    numeric_opacity = np.zeros(3)
    for k in range(3):
        for channel in range(3):
            plus = splat_set.copy()
            minus = splat_set.copy()
            plus.color[k, channel] += step
            minus.color[k, channel] -= step
            numeric_color[k, channel] = (loss(plus) - loss(minus)) / (2 * step)
        plus = splat_set.copy()
        minus = splat_set.copy()
        plus.opacity_logit[k] += step
        minus.opacity_logit[k] -= step
        numeric_opacity[k] = (loss(plus) - loss(minus)) / (2 * step)

    tests_passed &= check(
        'loss_test', "splats are visible",
        np.any(output.alpha > 0.0))
    tests_passed &= check(
        'loss_test', "colour gradient matches finite differences",
        np.linalg.norm(gradients.color - numeric_color) <=
        1e-6 * max(np.linalg.norm(numeric_color), 1e-8))
    tests_passed &= check(
        'loss_test', "opacity gradient matches finite differences",
        np.linalg.norm(gradients.opacity_logit - numeric_opacity) <=
        1e-5 * max(np.linalg.norm(numeric_opacity), 1e-8))

    image = rng.uniform(size=(16, 16, 3))
    value, _ = ssim_loss(image, image)
    tests_passed &= check(
        'loss_test', "ssim of an image with itself", abs(value) < 1e-12)
    value, _ = photo_loss(image, image)
    tests_passed &= check(
        'loss_test', "photometric loss of an image with itself", value == 0.0)

    single = render_2d(splat_set.select([0]), sphere, transform, camera)
    value, _, _ = depth_distortion_loss(single.tape)
    tests_passed &= check(
        'loss_test', "one contributor has no depth distortion", value == 0.0)

    laplacian = build_laplacian(sphere)
    vertices = sphere.vertices + rng.normal(0.0, 0.01, sphere.vertices.shape)
    value, gradient = bilaplacian_reg(vertices, laplacian)
    direction = rng.normal(size=vertices.shape)
    numeric = (bilaplacian_reg(vertices + step * direction, laplacian)[0] -
               bilaplacian_reg(vertices - step * direction, laplacian)[0]) / (2 * step)
    tests_passed &= check(
        'loss_test', "regularizer gradient matches finite differences",
        abs(numeric - np.sum(gradient * direction)) <= 1e-6 * max(abs(numeric), 1e-8))

    return tests_passed


def diffusion_test():

    rng = np.random.default_rng(4)
    tests_passed = True
    sphere = icosphere(2)
    laplacian = build_laplacian(sphere)

    operator = DiffusionOperator(laplacian, 20.0)
    field = rng.normal(size=(sphere.number_of_vertices, 3))
    smoothed = operator.apply(field)
    tests_passed &= check(
        'diffusion_test', "bi-laplacian solve residual",
        operator.residual(field, smoothed) <= 1e-8)
    tests_passed &= check(
        'diffusion_test', "diffusion damps the field",
        np.linalg.norm(smoothed) < np.linalg.norm(field))
    tests_passed &= check(
        'diffusion_test', "zero weight is the identity",
        np.array_equal(DiffusionOperator(laplacian, 0.0).apply(field), field))

    transform = GlobalTransform(
        (1.5, 0.8, 1.2),
        axis_angle_quaternion(normalize(np.array([1.0, 2.0, 3.0])), 0.7),
        (0.1, -0.2, 0.3))
    splat_set = random_splats(sphere, 100, rng)
    position_gradients = rng.normal(size=(100, 3))

    vertex_gradients = splat_grads_to_vertex_grads(
        position_gradients, splat_set, sphere, transform)
    naive = np.zeros((sphere.number_of_vertices, 3))
    for k in range(100):
        for m in range(3):
            vertex = sphere.faces[splat_set.face_id[k], m]
            naive[vertex] += splat_set.beta[k, m] * position_gradients[k]
    naive = naive @ np.linalg.inv(transform.matrix()).T
    tests_passed &= check(
        'diffusion_test', "splat gradients pulled back to vertices",
        np.abs(vertex_gradients - naive).max() <= 1e-12)

    targets = realignment_targets(splat_set, sphere, transform)
    geometry = SplatGeometry(splat_set, sphere, transform)
    world = transform.apply(sphere.vertices)
    worst = 0.0
    for vertex in range(sphere.number_of_vertices):
        weight = 0.0
        summed = np.zeros(3)
        for k in range(100):
            for m in range(3):
                if sphere.faces[splat_set.face_id[k], m] == vertex:
                    weight += splat_set.beta[k, m]
                    summed += splat_set.beta[k, m] * geometry.position[k]
        expected = summed / weight if weight > 0 else world[vertex]
        worst = max(worst, np.abs(targets[vertex] - expected).max())
    tests_passed &= check(
        'diffusion_test', "realignment targets", worst <= 1e-12)

    # vertex steps written out with a dense (I + lambda_l L)^-2. With
    # diffuse_momentum the previous update is added as it is; without
    # it momentum sums raw gradients and the sum is diffused once.
    small = icosphere(1)
    small_operator = DiffusionOperator(build_laplacian(small), 5.0)
    system = np.eye(small.number_of_vertices) + 5.0 * build_laplacian(
        small).matrix.toarray()

    def dense_diffuse(x):
        return np.linalg.solve(system, np.linalg.solve(system, x))

    fields = [rng.normal(size=(small.number_of_vertices, 3)) for _ in range(4)]
    learning_rate, mu, beta2 = 0.5, 0.9, 0.99

    for diffuse_momentum in [True, False]:
        stepper = VertexStepper(
            small_operator, learning_rate, momentum=mu, beta2=beta2,
            diffuse_momentum=diffuse_momentum)
        raw = np.zeros(fields[0].shape)
        previous = np.zeros(fields[0].shape)
        second_moment = 0.0
        worst = 0.0
        for t, field in enumerate(fields, start=1):
            if diffuse_momentum:
                direction = dense_diffuse(field)
            else:
                raw = mu * raw + field
                direction = dense_diffuse(raw)
            second_moment = (beta2 * second_moment + (1.0 - beta2) *
                             np.mean(np.sum(direction ** 2, axis=1)))
            rms = np.sqrt(second_moment / (1.0 - beta2 ** t))
            expected = -learning_rate * direction / (rms + 1e-12)
            if diffuse_momentum:
                expected = expected + mu * previous
            previous = expected
            worst = max(worst, np.abs(stepper.update(field) - expected).max())
        tests_passed &= check(
            'diffusion_test',
            "vertex step with diffuse_momentum=" + str(diffuse_momentum),
            worst <= 1e-9)

    return tests_passed


def gradient_analysis_test():

    folder = './scratch/gradient_analysis_test'
    subprocess.run(['mkdir', folder])
    tests_passed = True

    # analytic positional gradients of the splat energy checked against
    # finite differences, the depth identity and the rank argument
    report = run_gradient_checks(trials=1000 if full else 200, seed=0)
    report.write(folder + '/gradient_report.tex')
    for result in report.results:
        tests_passed &= check(
            'gradient_analysis_test', result.name, result.passed)

    with open(folder + '/gradient_report.tex') as f:
        written = f.read()
    tests_passed &= check(
        'gradient_analysis_test', "report states the overall outcome",
        report.all_passed() is True and 'overall: PASS' in written)

    failing = GradientReport()
    failing.add('forced failure', 1, 1.0, 0.5, False)
    failing.write(folder + '/failing_report.tex')
    with open(folder + '/failing_report.tex') as f:
        written = f.read()
    tests_passed &= check(
        'gradient_analysis_test', "a failed property fails the report",
        failing.all_passed() is False and 'overall: FAIL' in written)

    rng = np.random.default_rng(5)
    tests_passed &= check(
        'gradient_analysis_test', "rank test needs four samples",
        raises(ProbeError, nondegeneracy_test,
               np.eye(3), np.array([0.0, 0.0, 2.0]), 3, rng))

    return tests_passed


def flat_scene(splat_set):
    return Scene(grid_patch(1, 1.0), GlobalTransform(), splat_set)


def baker_test():

    folder = './scratch/baker_test'
    subprocess.run(['mkdir', folder])
    rng = np.random.default_rng(6)
    tests_passed = True

    resolution = 9
    beta, inside = texel_barycentrics(resolution)
    tests_passed &= check(
        'baker_test', "texels inside the triangle",
        np.count_nonzero(inside) == resolution * (resolution + 1) // 2 and
        np.all(beta >= 0.0))

    # one wide splat parallel to a flat patch: every texel sees the
    # same colour, displacement and the unperturbed normal
    color = np.array([0.2, 0.4, 0.7])
    single = SplatSet(
        [0], [[1 / 3, 1 / 3, 1 / 3]], [0.05], [[1.0, 0.0, 0.0, 0.0]],
        [[np.log(10.0), np.log(10.0), 0.0]], [logit(0.6)], [color])
    atlas = bake_all(flat_scene(single), texel_size=0.1, atlas_width=64)
    diffuse_error = 0.0
    displacement_error = 0.0
    normal_error = 0.0
    coverage = []
    for face_id in range(2):
        diffuse = atlas.chart_view(atlas.diffuse, face_id)
        diffuse_error = max(diffuse_error, np.abs(diffuse[:, :, 0:3] - color).max())
        coverage.append(diffuse[:, :, 3].min())
        displacement_error = max(displacement_error, np.abs(
            atlas.chart_view(atlas.displacement, face_id) - 0.05).max())
        normal_error = max(normal_error, np.abs(
            atlas.chart_view(atlas.normal, face_id) - [0.5, 0.5, 1.0]).max())
    tests_passed &= check(
        'baker_test', "uniform splat bakes its colour", diffuse_error <= 1e-12)
    tests_passed &= check(
        'baker_test', "uniform splat bakes its displacement",
        displacement_error <= 1e-12)
    tests_passed &= check(
        'baker_test', "aligned splat bakes the unperturbed normal",
        normal_error <= 1e-12)
    tests_passed &= check(
        'baker_test', "uniform splat covers every texel", min(coverage) > 0.0)

    atlas = bake_all(flat_scene(SplatSet.empty()), texel_size=0.1, atlas_width=64)
    tests_passed &= check(
        'baker_test', "no splats bakes the defaults",
        np.all(atlas.diffuse == 0.0) and np.all(atlas.displacement == 0.0) and
        np.all(atlas.normal == [0.5, 0.5, 1.0]))

    # on a flat patch nothing outside the hop limit reaches a texel, so
    # the neighbourhood bake and the every splat bake agree
    patch = grid_patch(6, 1.0)
    splat_set = seed_splats(patch, 2, scale_fraction=0.2)
    splat_set.d = rng.normal(0.0, 0.01, len(splat_set))
    splat_set.color = rng.uniform(0.0, 1.0, (len(splat_set), 3))
    scene = Scene(patch, GlobalTransform(), splat_set)
    resolutions = face_resolutions(patch, scene.transform, 0.02)
    excess = max(hop_limit_excess(scene, f, resolutions[f])
                 for f in range(patch.number_of_faces))
    fast = bake_all(scene, texel_size=0.02, atlas_width=256)
    brute = brute_force_bake(scene, texel_size=0.02, atlas_width=256)
    tests_passed &= check(
        'baker_test', "nothing beyond the hop limit", excess < 1e-6)
    tests_passed &= check(
        'baker_test', "neighbourhood bake matches every splat bake",
        np.abs(fast.diffuse - brute.diffuse).max() <= 1e-12 and
        np.abs(fast.normal - brute.normal).max() <= 1e-12 and
        np.abs(fast.displacement - brute.displacement).max() <= 1e-12)

    shuffled = bake_all(
        scene, texel_size=0.02, atlas_width=256,
        face_order=rng.permutation(patch.number_of_faces))
    tests_passed &= check(
        'baker_test', "face order does not matter",
        np.array_equal(shuffled.diffuse, fast.diffuse) and
        np.array_equal(shuffled.displacement, fast.displacement))

    sphere = icosphere(2)
    sphere_scene = Scene(sphere, GlobalTransform(), seed_splats(sphere, 1))
    sphere_atlas = bake_all(sphere_scene, texel_size=0.02, atlas_width=256)
    tests_passed &= check(
        'baker_test', "charts do not overlap",
        sphere_atlas.chart_table.overlaps() == 0)

    sphere_atlas.write(folder + '/atlas')
    loaded = AttributeAtlas.load(folder + '/atlas')
    tests_passed &= check(
        'baker_test', "atlas written and read back",
        np.abs(loaded.displacement - sphere_atlas.displacement).max() < 1e-6 and
        np.array_equal(loaded.chart_table.x, sphere_atlas.chart_table.x))

    # refinement against one view looking straight down at the patch.
    # The view only covers the middle of the patch.
    camera = Camera.look_at(
        (0.0, 0.0, 2.0), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
        40.0, 40.0, 8.0, 8.0, 16, 16)
    splat_set.d = np.zeros(len(splat_set))
    scene = Scene(patch, GlobalTransform(), splat_set)
    atlas = bake_all(scene, texel_size=0.05, atlas_width=256)
    target = rng.uniform(0.0, 1.0, (16, 16, 3))
    refined, errors = refine_texture(
        atlas, scene, [camera], [target], iterations=10,
        depth_maps=[np.full((16, 16), 2.0)])
    unseen = refined.visible_views == 0
    tests_passed &= check(
        'baker_test', "refinement error never increases",
        all(b <= a + 1e-12 for a, b in zip(errors, errors[1:])) and
        errors[-1] < errors[0])
    tests_passed &= check(
        'baker_test', "unseen texels keep their colour",
        np.any(unseen) and np.any(~unseen) and
        np.array_equal(refined.diffuse[unseen], atlas.diffuse[unseen]))

    return tests_passed


def synth_test():

    tests_passed = True

    # a cube face at z = 0.75 seen from z = 2.75 sits at depth 2
    target = TexturedMesh(cube_mesh(4, 0.75))
    camera = Camera.look_at(
        (0.0, 0.0, 2.75), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
        40.0, 40.0, 16.0, 16.0, 32, 32)
    color, depth, normal, alpha = target.render(camera)
    hit = alpha > 0

    tests_passed &= check(
        'synth_test', "centre pixel hits the mesh", hit[16, 16])
    tests_passed &= check(
        'synth_test', "ray cast depth",
        np.abs(depth[hit] - 2.0).max() < 1e-9)
    tests_passed &= check(
        'synth_test', "camera space normals face the camera",
        np.abs(normal[hit][:, 2] + 1.0).max() < 1e-9)
    tests_passed &= check(
        'synth_test', "background is black", np.all(color[~hit] == 0.0))

    rows, cols = np.nonzero(hit)
    tests_passed &= check(
        'synth_test', "silhouette centred on the principal point",
        abs(np.mean(cols + 0.5) - camera.cx) < 1e-9 and
        abs(np.mean(rows + 0.5) - camera.cy) < 1e-9)

    # oblique rays aimed exactly at vertices and edge midpoints of a
    # flat patch must not slip between the faces sharing them
    patch = grid_patch(10, 1.0)
    edges = patch.edges()
    aims = np.concatenate([
        patch.vertices,
        0.5 * (patch.vertices[edges[:, 0]] + patch.vertices[edges[:, 1]])])
    origin = np.array([0.123, -0.27, 1.7])
    directions = normalize(aims - origin)
    t, face_id, _, _ = intersect_rays(
        origin, directions, patch.vertices, patch.faces)
    tests_passed &= check(
        'synth_test', "rays through shared edges hit the surface",
        np.all(face_id >= 0) and
        np.abs((origin + t[:, None] * directions)[:, 2]).max() < 1e-9)

    rng = np.random.default_rng(7)
    points = rng.normal(size=(200, 3))
    tests_passed &= check(
        'synth_test', "chamfer distance of a cloud with itself",
        chamfer_distance(points, points) == 0.0)

    return tests_passed


def cli_test():

    folder = './scratch/cli_test'
    subprocess.run(['mkdir', folder])
    tests_passed = True

    tests_passed &= check(
        'cli_test', "bad config value exits with 2",
        main(['synth', '--bake_sort', 'sideways',
              '--dataset_dir', folder + '/data']) == EXIT_BAD_INPUT)
    tests_passed &= check(
        'cli_test', "missing dataset exits with 2",
        main(['fit', '--dataset_dir', folder + '/missing',
              '--output_dir', folder + '/run']) == EXIT_BAD_INPUT)
    tests_passed &= check(
        'cli_test', "missing checkpoint exits with 2",
        main(['render', '--output_dir', folder + '/nothing']) == EXIT_BAD_INPUT)
    tests_passed &= check(
        'cli_test', "gradient checks exit with 0",
        main(['check-gradients', '--trials', '20',
              '--report', folder + '/report.tex']) == EXIT_SUCCESS)
    tests_passed &= check(
        'cli_test', "every library error is an AnchorSplatError",
        issubclass(ConfigError, AnchorSplatError) and
        issubclass(CheckpointMismatchError, AnchorSplatError))

    return tests_passed


tests = [
    pipeline_test,
    mpi_bake_test,
    geometry_test,
    splat_test,
    rasterizer_test,
    loss_test,
    diffusion_test,
    gradient_analysis_test,
    baker_test,
    synth_test,
    cli_test
]

for test in tests:
    if not test():
        exit(1)
