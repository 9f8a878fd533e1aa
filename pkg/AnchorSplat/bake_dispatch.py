from mpi4py import MPI
from time import time
from enum import Enum
from math import floor
import sqlite3
import numpy as np

from AnchorSplat.report_generator import ReportGenerator
from AnchorSplat.logging import log_message
from AnchorSplat.scene import Scene
from AnchorSplat.attribute_baker import (
    BakeContext,
    bake_face,
    face_resolutions,
    pack_charts
)

"""
Atlas baking in parallel using MPI

input: a scene checkpoint directory
output: a chart database holding one baked chart per face
description: faces are independent, each chart only reads the splats
within a few faces of its own face. The dispatcher hands out batches
of face ids, the workers bake them and send the charts back and the
dispatcher writes them to the chart database as it gets them.
AtlasLoader assembles the atlas from the database afterwards.

the code in this file is designed to run on a compute cluster using MPI.
"""


create_metadata_table = """
    CREATE TABLE metadata (
            number_of_faces     INTEGER NOT NULL,
            number_of_charts    INTEGER NOT NULL,
            atlas_width         INTEGER NOT NULL,
            atlas_height        INTEGER NOT NULL,
            texel_size          REAL NOT NULL
    );
"""

insert_metadata = """
    INSERT INTO metadata VALUES (?, ?, ?, ?, ?)
"""

# face_id is the primary key so the loader can fetch single charts
create_charts_table = """
    CREATE TABLE charts (
            face_id             INTEGER NOT NULL PRIMARY KEY,
            resolution          INTEGER NOT NULL,
            x                   INTEGER NOT NULL,
            y                   INTEGER NOT NULL,
            covered_fraction    REAL NOT NULL,
            diffuse             BLOB NOT NULL,
            normal              BLOB NOT NULL,
            displacement        BLOB NOT NULL,
            coverage            BLOB NOT NULL
    );
"""

insert_chart = """
    INSERT INTO charts VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
"""


DISPATCHER_RANK = 0

# message tags

# sent by workers to the dispatcher once they have finished initializing
# only sent once
INITIALIZATION_FINISHED = 0

# sent by workers to the dispatcher to request a new batch of faces
SEND_ME_A_WORK_BATCH = 1

# sent by dispatcher to workers when delivering a new batch of faces
HERE_IS_A_WORK_BATCH = 2

# sent by workers to the dispatcher with a baked chart
NEW_CHART = 3

# sent by workers to the dispatcher when a chart is poorly covered
NEW_CHART_LOGGING = 4

class WorkerState(Enum):
    INITIALIZING = 0
    RUNNING = 1
    FINISHED = 2


def chart_message(chart):
    """
    plain dict of a FaceChart. arrays travel as float64 bytes
    """
    inside = chart.inside
    return {
        'face_id': int(chart.face_id),
        'resolution': int(chart.resolution),
        'covered_fraction': float(np.mean(chart.coverage[inside] > 0)),
        'diffuse': chart.diffuse.astype(np.float64).tobytes(),
        'normal': chart.normal.astype(np.float64).tobytes(),
        'displacement': chart.displacement.astype(np.float64).tobytes(),
        'coverage': chart.coverage.astype(np.float64).tobytes()}


def dispatcher(dispatcher_payload):

    comm = MPI.COMM_WORLD

    scene = Scene.load(dispatcher_payload.scene_dir)
    resolutions = face_resolutions(
        scene.mesh, scene.transform, dispatcher_payload.texel_size)
    chart_table = pack_charts(resolutions, dispatcher_payload.atlas_width)
    number_of_faces = scene.mesh.number_of_faces

    work_batch_list = []
    for start in range(0, number_of_faces, dispatcher_payload.faces_per_batch):
        work_batch_list.append(
            list(range(start, min(start + dispatcher_payload.faces_per_batch,
                                  number_of_faces))))

    log_message("creating chart db")
    chart_con = sqlite3.connect(dispatcher_payload.chart_db_file)
    chart_cur = chart_con.cursor()
    chart_cur.execute(create_metadata_table)
    chart_cur.execute(create_charts_table)
    chart_con.commit()

    report_generator = ReportGenerator(
        dispatcher_payload.report_file,
        title='poorly covered charts')

    worker_states = {}

    worker_ranks = [i for i in range(comm.Get_size()) if i != DISPATCHER_RANK]

    for i in worker_ranks:
        worker_states[i] = WorkerState.INITIALIZING

    for i in worker_states:
        # block, waiting for workers to initialize
        comm.recv(source=i, tag=INITIALIZATION_FINISHED)
        worker_states[i] = WorkerState.RUNNING

    log_message("all workers running")

    chart_count = 0

    log_message("handling requests")

    batches_left_at_last_checkpoint = len(work_batch_list)
    last_checkpoint_time = floor(time())
    while True:
        if WorkerState.RUNNING not in worker_states.values():
            break

        current_time = floor(time())
        time_diff = current_time - last_checkpoint_time
        if ( current_time % dispatcher_payload.checkpoint_interval == 0 and
             time_diff > 0):
            batches_left_at_current_checkpoint = len(work_batch_list)
            batch_count_diff = (
                batches_left_at_last_checkpoint -
                batches_left_at_current_checkpoint)

            batch_consumption_rate = batch_count_diff / time_diff

            log_message("batches remaining:", batches_left_at_current_checkpoint)
            log_message("batch consumption rate:",
                        batch_consumption_rate,
                        "batches per second")

            batches_left_at_last_checkpoint = batches_left_at_current_checkpoint
            last_checkpoint_time = current_time


        status = MPI.Status()
        data = comm.recv(source=MPI.ANY_SOURCE, tag=MPI.ANY_TAG, status=status)
        tag = status.Get_tag()
        rank = status.Get_source()

        if tag == SEND_ME_A_WORK_BATCH:
            if len(work_batch_list) == 0:
                comm.send(None, dest=rank, tag=HERE_IS_A_WORK_BATCH)
                worker_states[rank] = WorkerState.FINISHED
            else:
                # pop removes and returns the last item in the list
                work_batch = work_batch_list.pop()
                comm.send(work_batch, dest=rank, tag=HERE_IS_A_WORK_BATCH)
                log_message(
                    "dispatched faces", work_batch[0], "to", work_batch[-1])


        elif tag == NEW_CHART:
            chart = data
            face_id = chart['face_id']
            chart_cur.execute(
                insert_chart,
                (face_id,
                 chart['resolution'],
                 int(chart_table.x[face_id]),
                 int(chart_table.y[face_id]),
                 chart['covered_fraction'],
                 chart['diffuse'],
                 chart['normal'],
                 chart['displacement'],
                 chart['coverage']
                 ))

            chart_count += 1
            if chart_count % dispatcher_payload.commit_frequency == 0:
                chart_con.commit()


        elif tag == NEW_CHART_LOGGING:
            face_id, covered_fraction, candidates = data
            report_generator.emit_text(
                "face " + str(face_id) +
                ": covered fraction " + ('%.3f' % covered_fraction) +
                ", candidate splats " + str(candidates))


    log_message("finalizing chart database and bake report")
    chart_cur.execute(
        insert_metadata,
        (number_of_faces,
         chart_count,
         chart_table.width,
         chart_table.height,
         dispatcher_payload.texel_size)
    )

    report_generator.finished()
    chart_con.commit()
    chart_con.close()


def worker(worker_payload):

    comm = MPI.COMM_WORLD

    scene = Scene.load(worker_payload.scene_dir)
    context = BakeContext(
        scene,
        world_space_normals=worker_payload.world_space_normals,
        sort=worker_payload.sort)
    resolutions = face_resolutions(
        scene.mesh, scene.transform, worker_payload.texel_size)

    comm.send(None, dest=DISPATCHER_RANK, tag=INITIALIZATION_FINISHED)

    while True:
        comm.send(None, dest=DISPATCHER_RANK, tag=SEND_ME_A_WORK_BATCH)
        work_batch = comm.recv(source=DISPATCHER_RANK, tag=HERE_IS_A_WORK_BATCH)

        if work_batch is None:
            break

        for face_id in work_batch:
            candidates = context.neighborhood_splats(face_id, worker_payload.hops)
            chart = bake_face(context, face_id, resolutions[face_id], candidates)
            message = chart_message(chart)

            comm.send(message, dest=DISPATCHER_RANK, tag=NEW_CHART)

            if message['covered_fraction'] < worker_payload.coverage_report_threshold:
                comm.send(
                    (face_id, message['covered_fraction'], len(candidates)),
                    dest=DISPATCHER_RANK,
                    tag=NEW_CHART_LOGGING)
