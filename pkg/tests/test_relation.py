import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference_impl as ref
from sidenoise.data import ClassMeta
from sidenoise.errors import ConfigError, ParseError, ValidationError
from sidenoise.relation import (
    EmbeddingMode,
    GraphSource,
    RelationMatrix,
    blend,
    embed_labels,
    embedding_similarity,
    fnv1a64,
    load_relation_matrix,
    save_relation_matrix,
    taxonomy_similarity,
)

# frozen before the build from an independent FNV-1a run
FNV_CAT = 17718013163177550631


def flat_classes(n):
    return [ClassMeta(i, f"name{i}", f"shared tokens plus item{i}") for i in range(n)]


class TestTaxonomySimilarity:
    def test_self_similarity_is_one(self):
        mat = taxonomy_similarity(flat_classes(3))
        assert np.allclose(np.diag(mat.values), 1.0)

    def test_siblings_one_third(self):
        nodes = [
            ClassMeta(0, "a", parent=2),
            ClassMeta(1, "b", parent=2),
            ClassMeta(2, "root"),
        ]
        mat = taxonomy_similarity(nodes, num_classes=2)
        assert mat.values[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_five_node_taxonomy_against_bfs_oracle(self):
        # root -> {a, b}, a -> {c}, b -> {e}; classes are c (0) and e (1)
        nodes = [
            ClassMeta(0, "c", parent=2),
            ClassMeta(1, "e", parent=3),
            ClassMeta(2, "a", parent=4),
            ClassMeta(3, "b", parent=4),
            ClassMeta(4, "root"),
        ]
        mat = taxonomy_similarity(nodes, num_classes=2)
        assert mat.values[0, 1] == pytest.approx(0.2, abs=1e-15)

        parents = {m.class_id: m.parent for m in nodes}
        oracle = ref.taxonomy_matrix(parents, 2)
        np.testing.assert_allclose(mat.values, oracle, atol=1e-15)

    def test_disconnected_trees_get_finite_penalty(self):
        nodes = [
            ClassMeta(0, "a", parent=2),
            ClassMeta(1, "b", parent=3),
            ClassMeta(2, "r1"),
            ClassMeta(3, "r2"),
        ]
        mat = taxonomy_similarity(nodes, num_classes=2)
        # max depth 1 -> penalty distance 4
        assert mat.values[0, 1] == pytest.approx(1.0 / 5.0, abs=1e-15)
        assert mat.values[0, 1] > 0

    def test_cycle_is_structural_error(self):
        nodes = [ClassMeta(0, "a", parent=1), ClassMeta(1, "b", parent=0)]
        with pytest.raises(ValidationError, match="cycle"):
            taxonomy_similarity(nodes)

    def test_values_in_unit_interval_and_decreasing_with_distance(self):
        # chain root -> a -> b -> c: distances from c grow along the chain
        nodes = [
            ClassMeta(0, "c", parent=1),
            ClassMeta(1, "b", parent=2),
            ClassMeta(2, "a", parent=3),
            ClassMeta(3, "root"),
        ]
        mat = taxonomy_similarity(nodes, num_classes=4)
        row = mat.values[0]
        assert np.all(row > 0) and np.all(row <= 1)
        assert row[0] > row[1] > row[2] > row[3]

    def test_permutation_equivariance(self):
        nodes = [
            ClassMeta(0, "a", parent=3),
            ClassMeta(1, "b", parent=3),
            ClassMeta(2, "c", parent=4),
            ClassMeta(3, "p", parent=5),
            ClassMeta(4, "q", parent=5),
            ClassMeta(5, "root"),
        ]
        mat = taxonomy_similarity(nodes, num_classes=3).values
        perm = [2, 0, 1]  # new index -> old index
        remap = {old: new for new, old in enumerate(perm)}
        permuted_nodes = [
            ClassMeta(remap.get(m.class_id, m.class_id), m.name, m.description,
                      remap.get(m.parent, m.parent) if m.parent is not None else None)
            for m in nodes
        ]
        permuted = taxonomy_similarity(permuted_nodes, num_classes=3).values
        for new_i, old_i in enumerate(perm):
            for new_j, old_j in enumerate(perm):
                assert permuted[new_i, new_j] == pytest.approx(mat[old_i, old_j])


class TestEmbedLabels:
    def test_deterministic_bit_identical(self):
        classes = flat_classes(4)
        a = embed_labels(classes, EmbeddingMode.DESCRIPTION)
        b = embed_labels(classes, EmbeddingMode.DESCRIPTION)
        assert np.array_equal(a.vectors, b.vectors)

    def test_identical_descriptions_identical_rows(self):
        classes = [ClassMeta(0, "x", "same words here"), ClassMeta(1, "y", "same words here")]
        emb = embed_labels(classes, EmbeddingMode.DESCRIPTION)
        np.testing.assert_array_equal(emb.vectors[0], emb.vectors[1])

    def test_single_token_gives_signed_basis_vector(self):
        emb = embed_labels([ClassMeta(0, "x", "cat")], EmbeddingMode.DESCRIPTION, dim=64)
        row = emb.vectors[0]
        assert np.count_nonzero(row) == 1
        assert abs(row).max() == pytest.approx(1.0)

    def test_cat_bucket_and_sign_match_frozen_fnv_oracle(self):
        assert fnv1a64(b"cat") == FNV_CAT
        assert ref.fnv1a64(b"cat") == FNV_CAT
        emb = embed_labels([ClassMeta(0, "x", "cat")], EmbeddingMode.DESCRIPTION, dim=64)
        bucket = FNV_CAT % 64  # = 39
        sign = 1.0 if FNV_CAT < 2**63 else -1.0  # bit 63 set -> -1
        assert bucket == 39 and sign == -1.0
        assert emb.vectors[0][bucket] == pytest.approx(sign)

    def test_rows_match_reference_embedder(self):
        classes = [
            ClassMeta(0, "ape", "arboreal primate, long arms"),
            ClassMeta(1, "bee", "striped flying insect; makes honey"),
            ClassMeta(2, "cat", ""),
        ]
        emb = embed_labels(classes, EmbeddingMode.DESCRIPTION, dim=32)
        for i, meta in enumerate(classes):
            expected = ref.hash_embedding(meta.description, 32, meta.class_id)
            np.testing.assert_allclose(emb.vectors[i], expected, atol=1e-15)

    def test_empty_text_falls_back_to_basis_with_flag(self):
        emb = embed_labels(
            [ClassMeta(0, "a", ""), ClassMeta(1, "b", "words")],
            EmbeddingMode.DESCRIPTION,
            dim=8,
        )
        assert emb.fallback[0] and not emb.fallback[1]
        np.testing.assert_array_equal(emb.vectors[0], np.eye(8)[0])

    def test_name_mode_uses_names(self):
        classes = [ClassMeta(0, "same", "x"), ClassMeta(1, "same", "y")]
        emb = embed_labels(classes, EmbeddingMode.NAME)
        np.testing.assert_array_equal(emb.vectors[0], emb.vectors[1])

    def test_small_dim_rejected(self):
        with pytest.raises(ConfigError, match="dimension"):
            embed_labels(flat_classes(2), EmbeddingMode.NAME, dim=1)


class TestEmbeddingSimilarity:
    def test_identical_orthogonal_opposite(self):
        from sidenoise.relation import LabelEmbedding

        vecs = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        emb = LabelEmbedding(vecs, EmbeddingMode.NAME, np.zeros(4, dtype=bool))
        mat = embedding_similarity(emb).values
        assert mat[0, 1] == pytest.approx(1.0)
        assert mat[0, 2] == pytest.approx(0.0, abs=1e-15)
        assert mat[0, 3] == pytest.approx(-1.0)
        assert np.allclose(np.diag(mat), 1.0)

    @settings(max_examples=40)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_symmetric_unit_diagonal_bounded(self, seed):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(5, 7))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        from sidenoise.relation import LabelEmbedding

        mat = embedding_similarity(
            LabelEmbedding(vecs, EmbeddingMode.NAME, np.zeros(5, dtype=bool))
        ).values
        assert np.allclose(mat, mat.T, atol=1e-12)
        assert np.allclose(np.diag(mat), 1.0)
        assert np.all(mat >= -1.0) and np.all(mat <= 1.0)


class TestBlend:
    def test_single_part_is_identity_on_values(self):
        mat = taxonomy_similarity(flat_classes(3))
        out = blend([mat])
        np.testing.assert_array_equal(out.values, mat.values)
        assert out.source is GraphSource.HYBRID

    def test_two_parts_sum_elementwise(self):
        classes = flat_classes(3)
        s_w = taxonomy_similarity(classes)
        s_l = embedding_similarity(embed_labels(classes, EmbeddingMode.DESCRIPTION))
        out = blend([s_l, s_w])
        np.testing.assert_allclose(out.values, s_l.values + s_w.values, atol=1e-15)

    def test_blend_of_symmetric_is_symmetric(self):
        classes = flat_classes(4)
        out = blend(
            [taxonomy_similarity(classes),
             embedding_similarity(embed_labels(classes, EmbeddingMode.NAME))]
        )
        assert np.allclose(out.values, out.values.T, atol=1e-12)

    def test_coefficients_scale_parts(self):
        mat = taxonomy_similarity(flat_classes(3))
        out = blend([mat, mat], coefficients=[2.0, 0.5])
        np.testing.assert_allclose(out.values, 2.5 * mat.values, atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="mismatch"):
            blend([taxonomy_similarity(flat_classes(3)), taxonomy_similarity(flat_classes(4))])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            blend([])


class TestRelationMatrixInvariants:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValidationError, match="symmetric"):
            RelationMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]), GraphSource.HIERARCHY)

    def test_diagonal_must_dominate_for_elementary_sources(self):
        bad = np.array([[0.1, 0.5], [0.5, 0.1]])
        with pytest.raises(ValidationError, match="diagonal"):
            RelationMatrix(bad, GraphSource.HIERARCHY)
        # hybrid matrices are exempt
        RelationMatrix(bad, GraphSource.HYBRID)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        classes = flat_classes(3)
        mat = blend(
            [taxonomy_similarity(classes),
             embedding_similarity(embed_labels(classes, EmbeddingMode.DESCRIPTION))]
        )
        path = tmp_path / "graph.tsv"
        save_relation_matrix(mat, path, extra_header=("embed_dim=64",))
        back = load_relation_matrix(path)
        assert back.source is GraphSource.HYBRID
        np.testing.assert_allclose(back.values, mat.values, atol=1e-15)

    def test_header_required(self, tmp_path):
        path = tmp_path / "graph.tsv"
        path.write_text("1.0\t0.0\n0.0\t1.0\n")
        with pytest.raises(ParseError, match="header"):
            load_relation_matrix(path)
