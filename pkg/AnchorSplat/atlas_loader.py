import sqlite3
import numpy as np

from AnchorSplat.attribute_baker import ChartTable, FaceChart, AttributeAtlas
from AnchorSplat.constants import CheckpointMismatchError

"""
class for loading a chart database written by the bake dispatcher
"""

sql_get_metadata = """
    SELECT * FROM metadata;
"""

sql_get_chart = """
    SELECT * FROM charts WHERE face_id = ?;
"""

sql_get_all_charts = """
    SELECT * FROM charts ORDER BY face_id;
"""

sql_get_poorly_covered = """
    SELECT face_id, covered_fraction FROM charts
    WHERE covered_fraction < ? ORDER BY covered_fraction;
"""


def chart_from_row(row):
    face_id, resolution = row[0], row[1]
    shape = (resolution, resolution)
    coverage = np.frombuffer(row[8], dtype=np.float64).reshape(shape)
    b, a = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing='ij')
    inside = a + b <= resolution - 1
    return FaceChart(
        face_id,
        resolution,
        np.frombuffer(row[5], dtype=np.float64).reshape(shape + (3,)),
        np.frombuffer(row[6], dtype=np.float64).reshape(shape + (3,)),
        np.frombuffer(row[7], dtype=np.float64).reshape(shape),
        coverage,
        inside)


class AtlasLoader:

    def __init__(self, chart_database):

        self.con = sqlite3.connect(chart_database)

        cur = self.con.cursor()
        metadata = list(cur.execute(sql_get_metadata))[0]
        self.number_of_faces = metadata[0]
        self.number_of_charts = metadata[1]
        self.atlas_width = metadata[2]
        self.atlas_height = metadata[3]
        self.texel_size = metadata[4]

        if self.number_of_charts != self.number_of_faces:
            raise CheckpointMismatchError(
                "chart database holds " + str(self.number_of_charts) +
                " charts for " + str(self.number_of_faces) + " faces")

        self.charts = {}

    def get_chart(self, face_id):
        """
        charts get fetched one at a time and cached
        """
        if face_id in self.charts:
            return self.charts[face_id]

        cur = self.con.cursor()
        rows = list(cur.execute(sql_get_chart, (face_id,)))
        if len(rows) == 0:
            raise CheckpointMismatchError("no chart for face " + str(face_id))
        chart = chart_from_row(rows[0])
        self.charts[face_id] = chart
        return chart

    def poorly_covered(self, threshold=0.5):
        cur = self.con.cursor()
        return list(cur.execute(sql_get_poorly_covered, (threshold,)))

    def load_atlas(self):
        cur = self.con.cursor()
        rows = list(cur.execute(sql_get_all_charts))
        table = ChartTable(
            [row[2] for row in rows],
            [row[3] for row in rows],
            [row[1] for row in rows],
            self.atlas_width,
            self.atlas_height)
        atlas = AttributeAtlas(table)
        for row in rows:
            atlas.insert(chart_from_row(row))
        return atlas
