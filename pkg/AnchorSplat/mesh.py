import numpy as np
import networkx as nx
import scipy.sparse as sparse
from monty.json import MSONable

from AnchorSplat.constants import (
    EPS_AREA,
    DegenerateFaceError,
    MeshTopologyError,
    InvalidTransformError,
    MalformedInputError
)
from AnchorSplat.rotations import quaternion_to_rotation, normalize
from AnchorSplat.logging import log_message

"""
Fixed topology triangle meshes.

Local edge e of face f is the edge opposite local vertex e, i.e. the
directed edge F[f,(e+1)%3] -> F[f,(e+2)%3].

edge_opposite[f,e] is the face across that edge or -1 at a boundary.
edge_opposite_local[f,e] is the local edge index of the shared edge in
the neighbouring face, which is also the local index of the neighbour's
vertex opposite the shared edge.
"""


class Mesh:

    def __init__(
            self,
            vertices,
            faces,
            require_closed=True,
            check_orientation=True):

        self.vertices = np.array(vertices, dtype=float)
        self.faces = np.array(faces, dtype=np.int64)

        if (self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or
            self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise MeshTopologyError(
                "expected vertices (N,3) and faces (M,3), got " +
                str(self.vertices.shape) + " and " + str(self.faces.shape))

        if self.faces.size > 0 and (
                self.faces.min() < 0 or
                self.faces.max() >= len(self.vertices)):
            raise MeshTopologyError("face references a missing vertex")

        f = self.faces
        repeated = ((f[:, 0] == f[:, 1]) |
                    (f[:, 1] == f[:, 2]) |
                    (f[:, 0] == f[:, 2]))
        if np.any(repeated):
            raise MeshTopologyError(
                "face " + str(int(np.flatnonzero(repeated)[0])) +
                " repeats a vertex")

        self.check_faces(self.vertices)
        self._build_adjacency()

        self.is_closed = not np.any(self.edge_opposite < 0)
        if require_closed and not self.is_closed:
            raise MeshTopologyError("mesh has boundary edges")

        if self.is_closed and check_orientation:
            if self.signed_volume() <= 0:
                raise MeshTopologyError(
                    "faces are not outward oriented (signed volume " +
                    str(self.signed_volume()) + ")")

        self._face_graph = None


    @property
    def number_of_vertices(self):
        return len(self.vertices)

    @property
    def number_of_faces(self):
        return len(self.faces)

    def _build_adjacency(self):
        number_of_vertices = len(self.vertices)
        number_of_faces = len(self.faces)

        tails = np.stack([self.faces[:, (e + 1) % 3] for e in range(3)], axis=1)
        heads = np.stack([self.faces[:, (e + 2) % 3] for e in range(3)], axis=1)

        keys = (tails * number_of_vertices + heads).ravel()
        reverse_keys = (heads * number_of_vertices + tails).ravel()

        sorter = np.argsort(keys, kind='stable')
        sorted_keys = keys[sorter]
        if np.any(sorted_keys[1:] == sorted_keys[:-1]):
            raise MeshTopologyError(
                "directed edge used twice: mesh is non manifold "
                "or inconsistently oriented")

        position = np.searchsorted(sorted_keys, reverse_keys)
        position = np.minimum(position, len(sorted_keys) - 1)
        found = sorted_keys[position] == reverse_keys
        partner = np.where(found, sorter[position], -1)

        self.edge_opposite = np.where(
            partner >= 0, partner // 3, -1).reshape(number_of_faces, 3)
        self.edge_opposite_local = np.where(
            partner >= 0, partner % 3, -1).reshape(number_of_faces, 3)

        incident_faces = [[] for _ in range(number_of_vertices)]
        for face_id, face in enumerate(self.faces):
            for vertex in face:
                incident_faces[vertex].append(face_id)

        self.vertex_face_adjacency = [
            np.array(faces, dtype=np.int64) for faces in incident_faces]


    def edges(self):
        """
        unique undirected edges as a (E,2) array with i < j
        """
        pairs = np.concatenate([
            self.faces[:, [0, 1]],
            self.faces[:, [1, 2]],
            self.faces[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def face_vertices(self, vertices=None):
        if vertices is None:
            vertices = self.vertices
        return vertices[self.faces]

    def face_cross_products(self, vertices=None):
        corners = self.face_vertices(vertices)
        return np.cross(
            corners[:, 1] - corners[:, 0],
            corners[:, 2] - corners[:, 0])

    def face_areas(self, vertices=None):
        return 0.5 * np.linalg.norm(self.face_cross_products(vertices), axis=1)

    def face_normals(self, vertices=None):
        return normalize(self.face_cross_products(vertices))

    def face_normal(self, face_id, vertices=None):
        if vertices is None:
            vertices = self.vertices
        corners = vertices[self.faces[face_id]]
        cross = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        norm = np.linalg.norm(cross)
        if 0.5 * norm < EPS_AREA:
            raise DegenerateFaceError(
                "face " + str(face_id) + " has area " + str(0.5 * norm))
        return cross / norm

    def check_faces(self, vertices):
        areas = self.face_areas(vertices)
        bad = np.flatnonzero(~(areas > EPS_AREA))
        if len(bad) > 0:
            raise DegenerateFaceError(
                "face " + str(int(bad[0])) + " has area " +
                str(areas[bad[0]]))

    def signed_volume(self, vertices=None):
        corners = self.face_vertices(vertices)
        return np.sum(np.einsum(
            'ij,ij->i',
            corners[:, 0],
            np.cross(corners[:, 1], corners[:, 2]))) / 6.0

    def mean_edge_length(self, vertices=None):
        if vertices is None:
            vertices = self.vertices
        edges = self.edges()
        return np.mean(np.linalg.norm(
            vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1))

    def diameter(self, vertices=None):
        if vertices is None:
            vertices = self.vertices
        return np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0))

    def with_vertices(self, vertices):
        """
        new mesh sharing this topology
        """
        other = Mesh.__new__(Mesh)
        other.vertices = np.array(vertices, dtype=float)
        other.faces = self.faces
        other.edge_opposite = self.edge_opposite
        other.edge_opposite_local = self.edge_opposite_local
        other.vertex_face_adjacency = self.vertex_face_adjacency
        other.is_closed = self.is_closed
        other._face_graph = self._face_graph
        other.check_faces(other.vertices)
        return other

    def face_graph(self):
        if self._face_graph is None:
            graph = nx.Graph()
            graph.add_nodes_from(range(len(self.faces)))
            face_ids, local_edges = np.nonzero(self.edge_opposite >= 0)
            graph.add_edges_from(zip(
                face_ids.tolist(),
                self.edge_opposite[face_ids, local_edges].tolist()))
            self._face_graph = graph
        return self._face_graph

    def face_neighborhood(self, face_id, hops):
        """
        faces at most `hops` edge crossings away from face_id, sorted
        """
        ego = nx.generators.ego.ego_graph(
            self.face_graph(), face_id, radius=hops)
        return np.array(sorted(ego.nodes), dtype=np.int64)


class LaplacianMatrix:
    """
    uniform graph laplacian L = D - A stored as a scipy csr matrix
    together with the diffusion weight lambda_l
    """

    def __init__(self, matrix, weight=0.0):
        self.matrix = matrix
        self.weight = weight

    def __matmul__(self, other):
        return self.matrix @ other


def build_laplacian(mesh, weight=0.0):
    number_of_vertices = mesh.number_of_vertices
    edges = mesh.edges()

    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)),
        shape=(number_of_vertices, number_of_vertices))

    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    isolated = np.flatnonzero(degree == 0)
    if len(isolated) > 0:
        raise MeshTopologyError(
            "vertex " + str(int(isolated[0])) + " is isolated")

    matrix = (sparse.diags(degree) - adjacency).tocsr()
    return LaplacianMatrix(matrix, weight)


class GlobalTransform(MSONable):
    """
    v' = S* R(q*) v + t*
    """

    def __init__(
            self,
            scale=(1.0, 1.0, 1.0),
            rotation=(1.0, 0.0, 0.0, 0.0),
            translation=(0.0, 0.0, 0.0)):

        self.scale = np.array(scale, dtype=float)
        self.rotation = np.array(rotation, dtype=float)
        self.translation = np.array(translation, dtype=float)

    def validate(self):
        if self.scale.shape != (3,) or not np.all(self.scale > 0):
            raise InvalidTransformError(
                "scale must be strictly positive, got " + str(self.scale))
        norm = np.linalg.norm(self.rotation)
        if abs(norm - 1.0) > 1e-9:
            raise InvalidTransformError(
                "rotation quaternion has norm " + repr(norm))

    def rotation_matrix(self):
        return quaternion_to_rotation(self.rotation)

    def matrix(self):
        return self.scale[:, None] * self.rotation_matrix()

    def inverse_matrix(self):
        return self.rotation_matrix().T / self.scale[None, :]

    def apply(self, points):
        self.validate()
        return points @ self.matrix().T + self.translation

    def inverse(self, points):
        self.validate()
        return (points - self.translation) @ self.inverse_matrix().T

    def copy(self):
        return GlobalTransform(
            self.scale.copy(),
            self.rotation.copy(),
            self.translation.copy())

    def as_dict(self):
        return {
            "@module": type(self).__module__,
            "@class": type(self).__name__,
            "scale": self.scale.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist()}


def apply_global_transform(mesh, transform):
    """
    transformed copy of the mesh vertices. The mesh is not modified.
    """
    return transform.apply(mesh.vertices)


def orient_outward(vertices, faces):
    """
    flip faces of a star shaped (about the centroid) closed surface
    so that they point away from the centroid
    """
    faces = np.array(faces, dtype=np.int64)
    corners = vertices[faces]
    normals = np.cross(corners[:, 1] - corners[:, 0],
                       corners[:, 2] - corners[:, 0])
    centers = corners.mean(axis=1) - vertices.mean(axis=0)
    inward = np.einsum('ij,ij->i', normals, centers) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return faces


def tetrahedron():
    vertices = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0]])
    faces = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
    return Mesh(vertices, orient_outward(vertices, faces))


def icosahedron_arrays():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
        dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return normalize(vertices), faces


def icosphere(subdivisions=2, radius=1.0):
    vertices, faces = icosahedron_arrays()
    vertices = list(vertices)

    for _ in range(subdivisions):
        midpoint_cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                point = vertices[i] + vertices[j]
                vertices.append(point / np.linalg.norm(point))
                midpoint_cache[key] = len(vertices) - 1
            return midpoint_cache[key]

        new_faces = []
        for (a, b, c) in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces.extend([
                [a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = np.array(new_faces)

    vertices = radius * np.array(vertices)
    return Mesh(vertices, orient_outward(vertices, faces))


def cube_mesh(resolution=11, half_size=1.0):
    """
    closed cube with resolution x resolution quads per side, two
    triangles per quad, 12 * resolution^2 faces
    """
    ticks = np.linspace(-half_size, half_size, resolution + 1)
    points = []
    faces = []
    for axis in range(3):
        for side in (-half_size, half_size):
            u_axis, v_axis = [a for a in range(3) if a != axis]
            base = len(points)
            for i in range(resolution + 1):
                for j in range(resolution + 1):
                    point = np.zeros(3)
                    point[axis] = side
                    point[u_axis] = ticks[i]
                    point[v_axis] = ticks[j]
                    points.append(point)

            def index(i, j):
                return base + i * (resolution + 1) + j

            for i in range(resolution):
                for j in range(resolution):
                    faces.append([index(i, j), index(i + 1, j), index(i + 1, j + 1)])
                    faces.append([index(i, j), index(i + 1, j + 1), index(i, j + 1)])

    points = np.array(points)
    # weld the seams between sides
    keys = np.round(points / half_size * resolution).astype(np.int64)
    _, first, inverse = np.unique(
        keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    vertices = points[first]
    faces = inverse[np.array(faces)]
    return Mesh(vertices, orient_outward(vertices, faces))


def grid_patch(n=8, size=1.0):
    """
    open flat n x n patch in the z=0 plane with normals along +z. Only
    used where a boundary is harmless.
    """
    ticks = np.linspace(-size / 2, size / 2, n + 1)
    xs, ys = np.meshgrid(ticks, ticks, indexing='ij')
    vertices = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)

    def index(i, j):
        return i * (n + 1) + j

    faces = []
    for i in range(n):
        for j in range(n):
            faces.append([index(i, j), index(i + 1, j), index(i + 1, j + 1)])
            faces.append([index(i, j), index(i + 1, j + 1), index(i, j + 1)])

    return Mesh(vertices, faces, require_closed=False, check_orientation=False)


def sample_surface(vertices, faces, count, rng):
    """
    area weighted uniform samples on a triangle surface
    """
    corners = vertices[faces]
    areas = 0.5 * np.linalg.norm(np.cross(
        corners[:, 1] - corners[:, 0],
        corners[:, 2] - corners[:, 0]), axis=1)
    cumulative = np.cumsum(areas)
    picks = rng.random(count) * cumulative[-1]
    face_index = np.searchsorted(cumulative, picks)
    face_index = np.minimum(face_index, len(faces) - 1)

    lengths = rng.random((count, 2))
    flip = lengths.sum(axis=1) > 1.0
    lengths[flip] = 1.0 - lengths[flip]

    origin = corners[face_index, 0]
    edge_1 = corners[face_index, 1] - origin
    edge_2 = corners[face_index, 2] - origin
    return origin + lengths[:, :1] * edge_1 + lengths[:, 1:] * edge_2


def load_obj(path):
    """
    returns (vertices, faces, uvs, uv_faces). uvs and uv_faces are None
    when the file has no vt lines.
    """
    vertices = []
    faces = []
    uvs = []
    uv_faces = []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            parts = line.split()
            if len(parts) == 0 or parts[0].startswith('#'):
                continue
            try:
                if parts[0] == 'v':
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == 'vt':
                    uvs.append([float(x) for x in parts[1:3]])
                elif parts[0] == 'f':
                    if len(parts) != 4:
                        raise MeshTopologyError(
                            "only triangles are supported: " + line.strip())
                    corners = [p.split('/') for p in parts[1:]]
                    faces.append([int(c[0]) - 1 for c in corners])
                    if len(corners[0]) > 1 and corners[0][1] != '':
                        uv_faces.append([int(c[1]) - 1 for c in corners])
            except ValueError:
                raise MalformedInputError(
                    str(path) + ":" + str(number) + ": cannot parse " + repr(line.strip()))

    vertices = np.array(vertices, dtype=float).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(uvs) == 0:
        return vertices, faces, None, None
    return (vertices, faces,
            np.array(uvs, dtype=float),
            np.array(uv_faces, dtype=np.int64))


def load_mesh(path, require_closed=True):
    vertices, faces, _, _ = load_obj(path)
    log_message("loaded " + str(path) + ":",
                len(vertices), "vertices", len(faces), "faces")
    return Mesh(vertices, faces, require_closed=require_closed)


def write_obj(path, vertices, faces, uvs=None, uv_faces=None):
    with open(path, 'w') as f:
        for v in vertices:
            f.write('v %.17g %.17g %.17g\n' % tuple(v))
        if uvs is not None:
            for uv in uvs:
                f.write('vt %.17g %.17g\n' % tuple(uv))
            for face, uv_face in zip(faces, uv_faces):
                f.write('f ' + ' '.join(
                    str(a + 1) + '/' + str(b + 1)
                    for a, b in zip(face, uv_face)) + '\n')
        else:
            for face in faces:
                f.write('f %d %d %d\n' % tuple(face + 1))
