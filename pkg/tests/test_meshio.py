import numpy as np
import pytest

from roofgen.errors import ParseError
from roofgen.geometry import ImageGrid, Mesh
from roofgen.meshio import read_obj, read_pgm, write_obj, write_pgm


class TestObjRead:
    def test_minimal_file(self, tmp_path):
        p = tmp_path / "tri.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        m = read_obj(p)
        assert m.num_vertices == 3
        assert m.faces.tolist() == [[0, 1, 2]]

    def test_quad_fan_triangulated(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        m = read_obj(p)
        assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_face_arity_error_has_line(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nf 1 2\n")
        with pytest.raises(ParseError) as err:
            read_obj(p)
        assert err.value.line == 3

    def test_non_numeric_coordinate(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 zero 0\n")
        with pytest.raises(ParseError):
            read_obj(p)

    def test_out_of_range_index(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(ParseError):
            read_obj(p)

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "c.obj"
        p.write_text("# header\n\nv 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 3\n")
        assert read_obj(p).num_faces == 1


class TestObjRoundTrip:
    def test_exact_at_six_decimals(self, tmp_path, rng):
        verts = np.round(rng.random((10, 3)) * 20 - 10, 6)
        faces = np.array([rng.choice(10, 3, replace=False) for _ in range(5)])
        m = Mesh(verts, faces)
        p = tmp_path / "m.obj"
        write_obj(m, p)
        back = read_obj(p)
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.faces, m.faces)

    def test_write_is_stable(self, tmp_path, rng):
        verts = rng.random((6, 3))
        m = Mesh(verts, [[0, 1, 2], [3, 4, 5]])
        p1, p2 = tmp_path / "a.obj", tmp_path / "b.obj"
        write_obj(m, p1)
        write_obj(read_obj(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestPgm:
    def test_p2_values_scaled(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_text("P2\n2 2\n255\n0 255 128 64\n")
        grid = read_pgm(p)
        assert grid.width == 2 and grid.height == 2
        expect = np.array([[0, 255], [128, 64]]) / 255.0
        assert np.allclose(grid.pixels, expect)

    def test_all_zero(self, tmp_path):
        p = tmp_path / "z.pgm"
        p.write_text("P2\n3 1\n255\n0 0 0\n")
        assert np.all(read_pgm(p).pixels == 0.0)

    def test_truncated_p5_payload(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(ParseError):
            read_pgm(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "b.pgm"
        p.write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(ParseError):
            read_pgm(p)

    def test_wrong_maxval(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_text("P2\n1 1\n65535\n12\n")
        with pytest.raises(ParseError):
            read_pgm(p)

    def test_header_comments(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        grid = read_pgm(p)
        assert np.allclose(grid.pixels, [[0.0, 1.0]])

    def test_round_trip_exact_on_8bit(self, tmp_path, rng):
        grid = ImageGrid(rng.integers(0, 256, size=(9, 7)) / 255.0)
        p = tmp_path / "r.pgm"
        write_pgm(grid, p)
        back = read_pgm(p)
        assert np.array_equal(back.pixels, grid.pixels)

    def test_write_then_read_then_write_identical(self, tmp_path, rng):
        grid = ImageGrid(rng.random((5, 5)))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm(grid, p1)
        write_pgm(read_pgm(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
