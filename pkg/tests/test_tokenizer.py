import numpy as np
import pytest

from roofgen.errors import GrammarError, LimitExceeded
from roofgen.geometry import QuantizedMesh
from roofgen.tokenizer import (
    FACE_NEWFACE,
    FACE_STOP,
    VERTEX_STOP,
    VERTEX_VOCAB,
    SequenceLimits,
    decode_faces,
    decode_vertices,
    encode_faces,
    encode_vertices,
    mesh_to_sequences,
    sequences_to_mesh,
    valid_next_face_tokens,
    valid_next_tokens,
    valid_next_vertex_tokens,
    validate_face_sequence,
    validate_vertex_sequence,
)

from conftest import random_lattice_mesh


def qmesh(verts, faces):
    return QuantizedMesh(np.array(verts), np.array(faces).reshape(-1, 3))


class TestVertexCodec:
    def test_empty_mesh_stop_only(self):
        qm = QuantizedMesh(np.zeros((0, 3), int), np.zeros((0, 3), int))
        assert encode_vertices(qm).tolist() == [VERTEX_STOP]

    def test_flatten_zyx_order(self):
        # vertices given as (x, y, z); sorted by (z, y, x) they flatten to
        # (0,0,0), (0,0,10), (12,8,5)
        qm = qmesh([[0, 0, 0], [10, 0, 0], [5, 8, 12]], np.zeros((0, 3), int))
        tokens = encode_vertices(qm)
        assert tokens.tolist() == [0, 0, 0, 0, 0, 10, 12, 8, 5, VERTEX_STOP]

    def test_limit_exceeded_at_34_vertices(self):
        verts = np.array([[i, 0, 0] for i in range(34)])
        qm = QuantizedMesh(verts[np.lexsort((verts[:, 0], verts[:, 1], verts[:, 2]))],
                           np.zeros((0, 3), int))
        with pytest.raises(LimitExceeded):
            encode_vertices(qm)

    def test_decode_empty(self):
        assert decode_vertices([VERTEX_STOP]).shape == (0, 3)

    def test_decode_inverse(self):
        verts = decode_vertices([0, 0, 0, 0, 0, 10, 12, 8, 5, VERTEX_STOP])
        assert verts.tolist() == [[0, 0, 0], [10, 0, 0], [5, 8, 12]]

    def test_decode_truncated_triple(self):
        with pytest.raises(GrammarError):
            decode_vertices([0, VERTEX_STOP])

    def test_decode_misplaced_stop(self):
        with pytest.raises(GrammarError) as err:
            decode_vertices([0, 0, VERTEX_STOP, 0, VERTEX_STOP])
        assert err.value.position == 2

    def test_decode_token_too_large(self):
        with pytest.raises(GrammarError):
            decode_vertices([0, 0, 300, VERTEX_STOP])

    def test_validate_rejects_unsorted(self):
        with pytest.raises(GrammarError):
            validate_vertex_sequence([0, 0, 5, 0, 0, 1, VERTEX_STOP])

    def test_validate_rejects_duplicates(self):
        with pytest.raises(GrammarError):
            validate_vertex_sequence([1, 2, 3, 1, 2, 3, VERTEX_STOP])


class TestFaceCodec:
    def test_single_face(self):
        qm = qmesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        assert encode_faces(qm).tolist() == [2, 3, 4, FACE_STOP]

    def test_two_faces_newface_separator(self):
        qm = qmesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                   [[0, 1, 2], [1, 2, 3]])
        assert encode_faces(qm).tolist() == [2, 3, 4, FACE_NEWFACE, 3, 4, 5, FACE_STOP]

    def test_rotation_applied_before_encoding(self):
        qm = qmesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[2, 0, 1]])
        assert encode_faces(qm).tolist() == [2, 3, 4, FACE_STOP]

    def test_face_limit(self):
        qm = random_lattice_mesh(np.random.default_rng(0), max_vertices=8, max_faces=12)
        with pytest.raises(LimitExceeded):
            encode_faces(qm, SequenceLimits(max_faces=qm.num_faces - 1))

    def test_decode_single_face(self):
        assert decode_faces([2, 3, 4, FACE_STOP], 3).tolist() == [[0, 1, 2]]

    def test_decode_arity_error(self):
        with pytest.raises(GrammarError):
            decode_faces([2, 3, FACE_STOP], 3)

    def test_decode_pointer_out_of_range(self):
        with pytest.raises(GrammarError):
            decode_faces([2, 3, 9, FACE_STOP], 3)

    def test_decode_missing_stop(self):
        with pytest.raises(GrammarError):
            decode_faces([2, 3, 4], 3)

    def test_decode_trailing_newface_rejected(self):
        with pytest.raises(GrammarError):
            decode_faces([2, 3, 4, FACE_NEWFACE, FACE_STOP], 3)

    def test_decode_ngon_fan_triangulated(self):
        faces = decode_faces([2, 3, 4, 5, FACE_STOP], 4)
        assert faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_no_faces(self):
        assert decode_faces([FACE_STOP], 5).shape == (0, 3)


class TestRoundTrip:
    def test_thousand_random_meshes(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            qm = random_lattice_mesh(rng)
            vseq, fseq = mesh_to_sequences(qm)
            validate_vertex_sequence(vseq)
            validate_face_sequence(fseq, qm.num_vertices)
            back = sequences_to_mesh(vseq, fseq)
            assert np.array_equal(back.vertices, qm.vertices)
            assert np.array_equal(back.faces, qm.faces)


class TestValidNextTokens:
    def test_no_stop_mid_triple(self):
        mask = valid_next_vertex_tokens([0, 0])
        assert not mask[VERTEX_STOP]
        assert mask[:256].all()

    def test_stop_allowed_at_triple_boundary(self):
        assert valid_next_vertex_tokens([])[VERTEX_STOP]
        assert valid_next_vertex_tokens([0, 0, 0])[VERTEX_STOP]

    def test_monotone_z_at_new_triple(self):
        mask = valid_next_vertex_tokens([5, 0, 0])
        assert not mask[:5].any()
        assert mask[5]  # equal z fine, y/x can break the tie
        assert mask[6:256].all()

    def test_equal_z_blocked_when_tie_cannot_break(self):
        mask = valid_next_vertex_tokens([5, 255, 255])
        assert not mask[5]
        assert mask[6]

    def test_y_position_tie_rules(self):
        # prev triple (5, 7, 9), current z == 5: y >= 7 allowed
        mask = valid_next_vertex_tokens([5, 7, 9, 5])
        assert not mask[:7].any()
        assert mask[7] and mask[8:256].all()
        assert not mask[VERTEX_STOP]

    def test_x_position_strict(self):
        mask = valid_next_vertex_tokens([5, 7, 9, 5, 7])
        assert not mask[:10].any()
        assert mask[10:256].all()

    def test_limit_forces_stop(self):
        prefix = np.arange(33).repeat(3).reshape(-1)
        prefix = np.stack([np.arange(33)] * 3, axis=1).reshape(-1)  # 33 triples
        mask = valid_next_vertex_tokens(prefix, SequenceLimits())
        assert mask[VERTEX_STOP] and not mask[:256].any()

    def test_invalid_prefix_raises(self):
        with pytest.raises(GrammarError):
            valid_next_vertex_tokens([0, 0, 0, VERTEX_STOP])

    def test_face_arity_rule(self):
        mask = valid_next_face_tokens([2, 3], 5)
        assert not mask[FACE_STOP] and not mask[FACE_NEWFACE]

    def test_face_close_after_three(self):
        mask = valid_next_face_tokens([2, 3, 4], 5)
        assert mask[FACE_STOP] and mask[FACE_NEWFACE]

    def test_face_no_repeat_within_face(self):
        mask = valid_next_face_tokens([2, 3], 5)
        assert not mask[2] and not mask[3]
        assert mask[4] and mask[5] and mask[6]

    def test_face_repeat_allowed_after_newface(self):
        mask = valid_next_face_tokens([2, 3, 4, FACE_NEWFACE], 5)
        assert mask[2]
        assert not mask[FACE_STOP]  # trailing NEWFACE+STOP is ungrammatical

    def test_stop_allowed_on_empty(self):
        assert valid_next_face_tokens([], 5)[FACE_STOP]

    def test_face_limit_blocks_newface(self):
        mask = valid_next_face_tokens([2, 3, 4], 5, SequenceLimits(max_faces=1))
        assert mask[FACE_STOP] and not mask[FACE_NEWFACE]

    def test_dispatcher(self):
        assert valid_next_tokens([], "vertex").shape == (257,)
        assert valid_next_tokens([], "face", vertex_count=4).shape == (6,)
        with pytest.raises(ValueError):
            valid_next_tokens([], "nope")

    def test_never_masks_encoder_output(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            qm = random_lattice_mesh(rng)
            vseq, fseq = mesh_to_sequences(qm)
            for t in range(len(vseq)):
                mask = valid_next_vertex_tokens(vseq[:t])
                assert mask[vseq[t]], f"vertex mask blocks token at {t}"
            for t in range(len(fseq)):
                mask = valid_next_face_tokens(fseq[:t], qm.num_vertices)
                assert mask[fseq[t]], f"face mask blocks token at {t}"

    def test_vocab_sizes(self):
        assert valid_next_vertex_tokens([]).shape == (VERTEX_VOCAB,)

    def test_no_dead_ends_during_masked_walk(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            prefix = []
            for _ in range(40):
                mask = valid_next_vertex_tokens(prefix)
                assert mask.any()
                choices = np.flatnonzero(mask)
                tok = int(rng.choice(choices))
                if tok == VERTEX_STOP:
                    break
                prefix.append(tok)
