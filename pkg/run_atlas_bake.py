import sys
from mpi4py import MPI
from monty.serialization import loadfn

from AnchorSplat.bake_dispatch import (
    dispatcher,
    worker,
    DISPATCHER_RANK
)


# mpirun -n number_of_threads python run_atlas_bake.py bake_dispatcher_payload.json bake_worker_payload.json


comm = MPI.COMM_WORLD
rank = comm.Get_rank()

dispatcher_payload_json = sys.argv[1]
worker_payload_json = sys.argv[2]


if rank == DISPATCHER_RANK:
    dispatcher_payload = loadfn(dispatcher_payload_json)
    dispatcher(dispatcher_payload)

else:
    worker_payload = loadfn(worker_payload_json)
    worker(worker_payload)
