import csv
from pathlib import Path
from time import time

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu
import matplotlib.pyplot as plt
from monty.serialization import dumpfn

from AnchorSplat.constants import (
    MODE_2D,
    MODE_3D,
    InvalidTransformError,
    MeshTopologyError,
    OptimizationAbort
)
from AnchorSplat.mesh import build_laplacian
from AnchorSplat.rotations import normalize
from AnchorSplat.splats import (
    SplatGeometry,
    GradientAccumulator,
    reanchor_splat_set,
    densify_and_prune
)
from AnchorSplat.densify_questions import (
    densify_decision_tree,
    changed_splats_logging_tree
)
from AnchorSplat.rasterizer import render_2d, render_3d, backward_appearance
from AnchorSplat.losses import LossWeights, combine_losses, LOSS_TERMS
from AnchorSplat.report_generator import ReportGenerator
from AnchorSplat.logging import log_message

"""
Three stage optimization of a mesh anchored splat scene.

Each iteration renders one training view, evaluates the stage's loss
terms and runs the reverse pass. Splat parameters and the global
transform take adaptive moment steps. Vertices take a different path:
the splat positional gradients are gathered onto vertices with their
barycentric weights and mapped back through M^-1, smoothed by
(I + lambda_l L)^-2 and applied with momentum. Every realign_interval
iterations the vertices are pulled toward the weighted average of their
splat centres and the absorbed offset is taken out of the splat
displacements.
"""

SPLAT_PARAMETERS = ['beta', 'd', 'q_bar', 'log_scale', 'opacity_logit', 'color']


class DiffusionOperator:
    """
    applies (I + lambda_l L)^-2 with two solves against one sparse LU
    factorization. lambda_l = 0 is the identity.
    """

    def __init__(self, laplacian, weight):
        self.weight = float(weight)
        matrix = getattr(laplacian, 'matrix', laplacian)
        self.size = matrix.shape[0]
        self.system = None
        self.factorization = None
        if self.weight > 0.0:
            self.system = (
                sparse.identity(self.size, format='csc') +
                self.weight * matrix).tocsc()
            try:
                self.factorization = splu(self.system)
            except RuntimeError as e:
                raise MeshTopologyError(
                    "could not factorize diffusion operator: " + str(e))

    def apply(self, field):
        field = np.asarray(field, dtype=float)
        if self.factorization is None:
            return field.copy()
        return self.factorization.solve(self.factorization.solve(field))

    def residual(self, field, solution):
        """
        |(I + lambda_l L)^2 x - g| / |g|
        """
        if self.system is None:
            return np.linalg.norm(solution - field) / max(
                np.linalg.norm(field), 1e-300)
        squared = self.system @ (self.system @ solution)
        return np.linalg.norm(squared - field) / max(
            np.linalg.norm(field), 1e-300)


def diffuse(field, operator):
    return operator.apply(field)


def inverse_transform_matrix(transform):
    matrix = transform.matrix()
    if not np.all(np.isfinite(matrix)) or abs(np.linalg.det(matrix)) < 1e-300:
        raise InvalidTransformError("global transform matrix is singular")
    return np.linalg.inv(matrix)


def splat_grads_to_vertex_grads(position_gradients, splat_set, mesh, transform):
    """
    [dL/dV]_i = M^-1 sum_k beta_{k,i} dL/dp_k over the splats on faces
    incident to vertex i
    """
    inverse = inverse_transform_matrix(transform)
    corners = mesh.faces[splat_set.face_id]
    weighted = splat_set.beta[:, :, None] * position_gradients[:, None, :]
    gathered = np.zeros((mesh.number_of_vertices, 3))
    for axis in range(3):
        gathered[:, axis] = np.bincount(
            corners.ravel(),
            weights=weighted[:, :, axis].ravel(),
            minlength=mesh.number_of_vertices)
    return gathered @ inverse.T


def realignment_targets(splat_set, mesh, transform, geometry=None):
    """
    v_i = sum_k beta_{k,i} p_k / sum_k beta_{k,i}; vertices without
    weight keep their current world position
    """
    if geometry is None:
        geometry = SplatGeometry(splat_set, mesh, transform)
    world_vertices = geometry.world_vertices
    corners = mesh.faces[splat_set.face_id].ravel()
    weights = splat_set.beta.ravel()
    positions = np.repeat(geometry.position, 3, axis=0)

    total = np.bincount(
        corners, weights=weights, minlength=mesh.number_of_vertices)
    targets = world_vertices.copy()
    has_weight = total > 0
    for axis in range(3):
        summed = np.bincount(
            corners, weights=weights * positions[:, axis],
            minlength=mesh.number_of_vertices)
        targets[has_weight, axis] = summed[has_weight] / total[has_weight]
    return targets


def realign_vertices(mesh, targets, operator, transform):
    """
    template space update M^-1 (I + lambda_l L)^-2 (V_hat - V')
    """
    inverse = inverse_transform_matrix(transform)
    world_vertices = transform.apply(mesh.vertices)
    return diffuse(targets - world_vertices, operator) @ inverse.T


def displacement_shift(mesh, transform, vertex_update):
    """
    per face mean normal component of the world space realignment
    offset of the face's vertices
    """
    world_update = vertex_update @ transform.matrix().T
    normals = mesh.face_normals(transform.apply(mesh.vertices))
    corner_updates = world_update[mesh.faces]
    return np.einsum('fmk,fk->f', corner_updates, normals) / 3.0


def soft_reset_displacement(splat_set, shift):
    """
    d <- d - clip(shift_f, -|d|, |d|)
    """
    face_shift = shift[splat_set.face_id]
    limit = np.abs(splat_set.d)
    splat_set.d = splat_set.d - np.clip(face_shift, -limit, limit)


class AdamState:
    """
    first and second moments per named parameter array
    """

    def __init__(self, beta1=0.9, beta2=0.999, epsilon=1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first = {}
        self.second = {}
        self.steps = {}

    def update(self, name, gradient, learning_rate):
        """
        returns the step to subtract from the parameter
        """
        if name not in self.first or self.first[name].shape != gradient.shape:
            self.first[name] = np.zeros(gradient.shape)
            self.second[name] = np.zeros(gradient.shape)
            self.steps[name] = 0

        self.steps[name] += 1
        t = self.steps[name]
        self.first[name] = (
            self.beta1 * self.first[name] + (1.0 - self.beta1) * gradient)
        self.second[name] = (
            self.beta2 * self.second[name] +
            (1.0 - self.beta2) * gradient * gradient)
        first = self.first[name] / (1.0 - self.beta1 ** t)
        second = self.second[name] / (1.0 - self.beta2 ** t)
        return learning_rate * first / (np.sqrt(second) + self.epsilon)

    def remap(self, names, parents, fresh):
        """
        moments follow their splats through densification; new splats
        start from zero
        """
        for name in names:
            if name not in self.first:
                continue
            for moments in (self.first, self.second):
                remapped = moments[name][parents]
                remapped[fresh] = 0.0
                moments[name] = remapped


class VertexStepper:
    """
    vertex updates from raw vertex gradient fields. The step is the
    diffused direction normalized by a running scalar second moment.

    diffuse_momentum=True: momentum on the diffused field,
        update = -lr * D(g) / rms + mu * previous update
    diffuse_momentum=False: momentum on the raw field,
        m = mu * m + g, update = -lr * D(m) / rms
    """

    def __init__(
            self,
            operator,
            learning_rate,
            momentum=0.9,
            beta2=0.999,
            diffuse_momentum=True,
            epsilon=1e-12):
        self.operator = operator
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.beta2 = beta2
        self.diffuse_momentum = diffuse_momentum
        self.epsilon = epsilon
        self.raw_momentum = None
        self.previous = None
        self.second_moment = 0.0
        self.steps = 0

    def update(self, field):
        if self.previous is None or self.previous.shape != field.shape:
            self.raw_momentum = np.zeros(field.shape)
            self.previous = np.zeros(field.shape)

        if self.diffuse_momentum:
            direction = diffuse(field, self.operator)
        else:
            self.raw_momentum = self.momentum * self.raw_momentum + field
            direction = diffuse(self.raw_momentum, self.operator)

        self.steps += 1
        mean_square = np.mean(np.sum(direction * direction, axis=1))
        self.second_moment = (
            self.beta2 * self.second_moment + (1.0 - self.beta2) * mean_square)
        corrected = self.second_moment / (1.0 - self.beta2 ** self.steps)
        step = self.learning_rate * direction / (np.sqrt(corrected) + self.epsilon)

        update = -step
        if self.diffuse_momentum:
            update = update + self.momentum * self.previous
        self.previous = update
        return update


class Stage:

    def __init__(self, index, start, iterations, mode, terms):
        self.index = index
        self.start = start
        self.iterations = iterations
        self.mode = mode
        self.terms = terms

    @property
    def end(self):
        return self.start + self.iterations


class Schedule:
    """
    stage 1 and 3 render flat splats, stage 2 volumetric ones. Stage 3
    adds the normal consistency and depth distortion terms.
    """

    def __init__(
            self,
            stage_iterations=(2000, 2000, 1000),
            use_3d_stage=True,
            densify_interval=100,
            densify_from=500,
            densify_until=3000,
            realign_interval=50,
            opacity_reset_interval=600):

        base_terms = ['photo', 'ssim', 'reg']
        modes = [MODE_2D, MODE_3D if use_3d_stage else MODE_2D, MODE_2D]
        terms = [base_terms, base_terms, base_terms + ['normal', 'dist']]
        self.stages = []
        start = 0
        for index in range(3):
            self.stages.append(Stage(
                index, start, stage_iterations[index], modes[index],
                terms[index]))
            start += stage_iterations[index]

        self.densify_interval = densify_interval
        self.densify_from = densify_from
        self.densify_until = densify_until
        self.realign_interval = realign_interval
        self.opacity_reset_interval = opacity_reset_interval

    @classmethod
    def from_config(cls, config):
        return cls(
            config.stage_iterations,
            config.use_3d_stage,
            config.densify_interval,
            config.densify_from,
            config.densify_until,
            config.realign_interval,
            config.opacity_reset_interval)

    @property
    def total_iterations(self):
        return self.stages[-1].end

    def stage_at(self, iteration):
        for stage in self.stages:
            if iteration < stage.end:
                return stage
        return self.stages[-1]

    def densify_now(self, iteration):
        return (self.densify_interval > 0 and
                iteration > 0 and
                self.densify_from <= iteration < self.densify_until and
                iteration % self.densify_interval == 0)

    def realign_now(self, iteration):
        return (self.realign_interval > 0 and
                iteration > 0 and
                iteration % self.realign_interval == 0)


def check_barycentrics(splat_set, tolerance=1e-9):
    """
    number of splats violating beta >= 0, sum beta = 1
    """
    if len(splat_set) == 0:
        return 0
    bad = (np.any(splat_set.beta < -tolerance, axis=1) |
           (np.abs(splat_set.beta.sum(axis=1) - 1.0) > tolerance))
    return int(np.count_nonzero(bad))


LOG_HEADER = ['iteration', 'stage', 'mode'] + LOSS_TERMS + ['total', 'splats']


class DeformOptimizer:

    def __init__(
            self,
            scene,
            cameras,
            targets,
            config,
            output_dir=None,
            reference_normals=None):

        self.scene = scene
        self.cameras = cameras
        self.targets = targets
        self.config = config
        self.reference_normals = reference_normals
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.rng = np.random.default_rng(config.seed)

        self.schedule = Schedule.from_config(config)
        self.scene_scale = scene.world_mesh().diameter()
        self.template_scale = scene.mesh.diameter()
        self.weights = LossWeights.from_config(config, self.scene_scale)

        log_message("building laplacian")
        self.laplacian = build_laplacian(scene.mesh)
        diffusion_weight = config.lambda_l if config.use_diffusion else 0.0
        log_message("factorizing diffusion operator, lambda_l =", diffusion_weight)
        self.operator = DiffusionOperator(self.laplacian, diffusion_weight)

        self.adam = AdamState(
            config.adam_beta1, config.adam_beta2, config.adam_epsilon)
        self.vertex_stepper = VertexStepper(
            self.operator,
            config.lr_vertex * self.template_scale,
            momentum=config.momentum,
            beta2=config.adam_beta2,
            diffuse_momentum=config.diffuse_momentum)

        self.decision_tree = densify_decision_tree(
            config.tau_opacity,
            config.tau_grad,
            config.percent_dense * self.scene_scale)
        self.logging_decision_tree = changed_splats_logging_tree(
            config.tau_opacity, config.tau_grad)
        self.densify_report = None
        self.accumulator = GradientAccumulator(len(scene.splat_set))

        self.iteration = 0
        self.walk_overflows = 0
        self.log_rows = []

        if not config.use_displacement:
            scene.splat_set.d = np.zeros(len(scene.splat_set))

    def render(self, camera, mode):
        scene = self.scene
        geometry = SplatGeometry(scene.splat_set, scene.mesh, scene.transform)
        if mode == MODE_2D:
            return render_2d(
                scene.splat_set, scene.mesh, scene.transform, camera,
                geometry=geometry)
        return render_3d(
            scene.splat_set, scene.mesh, scene.transform, camera,
            blur=self.config.blur, geometry=geometry)

    def abort(self, stage, report, gradients):
        dump = {
            'iteration': self.iteration,
            'stage': stage.index,
            'mode': stage.mode,
            'loss_terms': dict(report.terms),
            'total': report.total,
            'non_finite': gradients.non_finite_counts(),
            'splats': len(self.scene.splat_set)}
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            path = self.output_dir / 'abort_dump.json'
            log_message("writing " + path.as_posix())
            dumpfn(dump, path, indent=2)
        raise OptimizationAbort(
            "non finite gradient at iteration " + str(self.iteration) +
            ": " + str(dump['non_finite']))

    def update_splats(self, gradients):
        config = self.config
        splat_set = self.scene.splat_set
        learning_rates = {
            'beta': config.lr_position,
            'd': config.lr_position * self.scene_scale,
            'q_bar': config.lr_rotation,
            'log_scale': config.lr_scale,
            'opacity_logit': config.lr_opacity,
            'color': config.lr_color}

        for name in SPLAT_PARAMETERS:
            if name == 'd' and not config.use_displacement:
                continue
            step = self.adam.update(
                name, getattr(gradients, name), learning_rates[name])
            if name == 'beta':
                step = step - step.mean(axis=1, keepdims=True)
            setattr(splat_set, name, getattr(splat_set, name) - step)

        splat_set.q_bar = normalize(splat_set.q_bar)
        splat_set.color = np.clip(splat_set.color, 0.0, 1.0)

    def update_transform(self, gradients, stage):
        config = self.config
        if config.freeze_transform_after_stage1 and stage.index > 0:
            return
        transform = self.scene.transform

        step = self.adam.update(
            'transform_log_scale', gradients.transform_log_scale,
            config.lr_transform)
        transform.scale = np.exp(np.log(transform.scale) - step)

        step = self.adam.update(
            'transform_rotation', gradients.transform_rotation,
            config.lr_transform)
        transform.rotation = normalize(transform.rotation - step)

        step = self.adam.update(
            'transform_translation', gradients.transform_translation,
            config.lr_transform * self.scene_scale)
        transform.translation = transform.translation - step

    def realign(self):
        scene = self.scene
        targets = realignment_targets(scene.splat_set, scene.mesh, scene.transform)
        update = realign_vertices(
            scene.mesh, targets, self.operator, scene.transform)
        if self.config.use_displacement:
            shift = displacement_shift(scene.mesh, scene.transform, update)
            soft_reset_displacement(scene.splat_set, shift)
        scene.mesh = scene.mesh.with_vertices(scene.mesh.vertices + update)
        overflow = reanchor_splat_set(
            scene.splat_set, scene.mesh, self.config.max_walk_steps)
        self.walk_overflows += int(np.count_nonzero(overflow))

    def densify(self):
        scene = self.scene
        new_set, parents, fresh, logged = densify_and_prune(
            scene.splat_set,
            self.accumulator,
            self.iteration,
            scene.mesh,
            scene.transform,
            self.decision_tree,
            self.rng,
            opacity_reset_interval=self.schedule.opacity_reset_interval,
            opacity_reset=self.config.opacity_reset,
            max_splats=self.config.max_splats,
            logging_decision_tree=self.logging_decision_tree,
            max_walk_steps=self.config.max_walk_steps)
        self.adam.remap(SPLAT_PARAMETERS, parents, fresh)
        scene.splat_set = new_set
        self.accumulator = GradientAccumulator(len(new_set))
        self.report_densification(logged)
        return logged

    def report_densification(self, logged):
        """
        decision pathway of every pruned, cloned or split splat, one
        page per densification pass
        """
        if self.output_dir is None:
            return
        if self.densify_report is None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self.densify_report = ReportGenerator(
                self.output_dir / "densify_report.txt",
                title="densification decision pathways")
        report = self.densify_report
        report.emit_text(
            "iteration " + str(self.iteration) + ": " +
            str(len(logged)) + " splats changed")
        report.emit_newline()
        for index, splat, decision_pathway in logged:
            report.emit_splat(index, splat, decision_pathway)
        report.emit_newpage()

    def step(self):
        """
        one iteration. returns the LossReport of the rendered view.
        """
        config = self.config
        scene = self.scene
        stage = self.schedule.stage_at(self.iteration)
        scene.splat_set.mode = stage.mode

        view = int(self.rng.integers(len(self.cameras)))
        camera = self.cameras[view]
        output = self.render(camera, stage.mode)

        reference = None
        if config.normal_reference == 'external' and self.reference_normals is not None:
            reference = self.reference_normals[view]

        report = combine_losses(
            output,
            self.targets[view],
            self.weights,
            stage.terms,
            camera=camera,
            vertices=scene.mesh.vertices,
            laplacian=self.laplacian,
            reference_normals=reference)

        gradients = backward_appearance(output.tape, report.image_gradients)
        if not gradients.is_finite() or not np.isfinite(report.total):
            self.abort(stage, report, gradients)

        self.accumulator.add(gradients.screen, gradients.visible)

        field = splat_grads_to_vertex_grads(
            gradients.position, scene.splat_set, scene.mesh, scene.transform)
        if report.vertex_gradient is not None:
            field = field + report.vertex_gradient

        self.update_splats(gradients)
        self.update_transform(gradients, stage)
        update = self.vertex_stepper.update(field)
        scene.mesh = scene.mesh.with_vertices(scene.mesh.vertices + update)

        overflow = reanchor_splat_set(
            scene.splat_set, scene.mesh, config.max_walk_steps)
        self.walk_overflows += int(np.count_nonzero(overflow))

        self.iteration += 1

        if config.use_realignment and self.schedule.realign_now(self.iteration):
            self.realign()

        if self.schedule.densify_now(self.iteration):
            self.densify()

        self.log_rows.append(
            [self.iteration, stage.index + 1, stage.mode] +
            report.to_row() + [len(scene.splat_set)])
        return report

    def checkpoint(self, name):
        if self.output_dir is None:
            return
        violations = check_barycentrics(self.scene.splat_set)
        if violations > 0:
            log_message(
                "checkpoint", name, "has", violations,
                "splats with invalid barycentrics")
        self.scene.save(self.output_dir / 'checkpoints' / name)

    def write_log(self):
        if self.output_dir is None:
            return
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / 'training_log.csv'
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(LOG_HEADER)
            for row in self.log_rows:
                writer.writerow(
                    row[:3] + ['%.17g' % value for value in row[3:-1]] +
                    [row[-1]])
        if len(self.log_rows) > 0:
            plot_training_curve(self.log_rows, self.output_dir / 'training_curve.png')

    def fit(self):
        total = self.schedule.total_iterations
        log_message("optimizing for", total, "iterations")
        start = time()
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)

        while self.iteration < total:
            report = self.step()

            if (self.config.log_interval > 0 and
                    self.iteration % self.config.log_interval == 0):
                rate = self.iteration / max(time() - start, 1e-9)
                log_message(
                    "iteration", self.iteration, "/", total,
                    "stage", self.schedule.stage_at(self.iteration - 1).index + 1,
                    "loss", "%.6f" % report.total,
                    "splats", len(self.scene.splat_set),
                    "iterations per second", "%.2f" % rate)

            if (self.config.checkpoint_interval > 0 and
                    self.iteration % self.config.checkpoint_interval == 0):
                self.checkpoint('iteration_%06d' % self.iteration)

        if self.walk_overflows > 0:
            log_message("walks exceeding max_walk_steps:", self.walk_overflows)

        if self.densify_report is not None:
            self.densify_report.finished()
            self.densify_report = None
        self.write_log()
        if self.output_dir is not None:
            self.scene.save(self.output_dir / 'final')
        log_message("optimization finished in", "%.1f" % (time() - start), "s")
        return self.scene


def plot_training_curve(rows, path):
    iterations = np.array([row[0] for row in rows])
    totals = np.array([row[3 + len(LOSS_TERMS)] for row in rows])
    fig, ax = plt.subplots(1, 1, figsize=(6, 4))
    ax.plot(iterations, totals, color='black', linewidth=0.8)
    for index, term in enumerate(LOSS_TERMS):
        values = np.array([row[3 + index] for row in rows])
        if np.any(values > 0):
            ax.plot(iterations, values, linewidth=0.6, label=term)
    ax.set_xlabel('iteration')
    ax.set_ylabel('loss')
    ax.set_yscale('log')
    ax.legend(fontsize=8)
    log_message("writing " + str(path))
    fig.savefig(path)
    plt.close(fig)
