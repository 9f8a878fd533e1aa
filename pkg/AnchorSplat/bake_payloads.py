from monty.json import MSONable

class BakeDispatcherPayload(MSONable):
    """
    class for storing all the arguments required by the bake
    dispatcher. We do this instead of passing arguments directly
    because it makes it easier to pass arguments through the MPI
    barrier.
    """

    def __init__(
            self,
            scene_dir,
            chart_db_file,
            report_file,
            texel_size = 0.02,
            atlas_width = 1024,
            faces_per_batch = 64,
            commit_frequency = 1000,
            checkpoint_interval = 10):

        self.scene_dir = scene_dir
        self.chart_db_file = chart_db_file
        self.report_file = report_file
        self.texel_size = texel_size
        self.atlas_width = atlas_width
        self.faces_per_batch = faces_per_batch
        self.commit_frequency = commit_frequency
        self.checkpoint_interval = checkpoint_interval


class BakeWorkerPayload(MSONable):
    """
    class for storing all the arguments required by a bake worker.
    charts whose covered fraction of in triangle texels falls below
    coverage_report_threshold are sent to the dispatcher report.
    """
    def __init__(
            self,
            scene_dir,
            texel_size = 0.02,
            sort = 'outward',
            world_space_normals = False,
            hops = 3,
            coverage_report_threshold = 0.5):

        self.scene_dir = scene_dir
        self.texel_size = texel_size
        self.sort = sort
        self.world_space_normals = world_space_normals
        self.hops = hops
        self.coverage_report_threshold = coverage_report_threshold
