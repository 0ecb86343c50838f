"""Prompt rendering format lock and hashed context encoder."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topoprompt.descriptors import GraphStats, StructuralProfile
from topoprompt.errors import DataError
from topoprompt.prompts import (
    CONTEXT_DIM,
    context_embeddings,
    encode_hashed,
    encode_prompts,
    format_sigfig2,
    load_context,
    render_prompt,
)
from topoprompt.storage import read_table, save_matrix
from topoprompt.graphs import generate_sbm

GOLDEN = Path(__file__).parent / "golden"

REFERENCE_LINE = (
    "Node profile: local(deg=12, cc=0.167, core=4, ego1V=13, ego1E=22, "
    "ego1D=0.046, ego2V=214, ego2E=4103, ego2D=0.181, pr=0.00084); "
    "global(lp_comm=5, lp_size=312, lp_dens=0.021; scoda_comm=8, "
    "scoda_size=189, scoda_dens=0.018); "
    "graph(N=2708, E=5429, avgd=4.01, trans=0.241, q25=2, q50=3, q75=5, "
    "spec_gap=1.23)."
)

PCOLS = ("deg", "cc", "core", "ego1_v", "ego1_e", "ego1_d", "ego2_v", "ego2_e",
         "ego2_d", "pagerank", "lp_comm", "lp_size", "lp_dens",
         "scoda_comm", "scoda_size", "scoda_dens")
INT_COLS = {"deg", "core", "ego1_v", "ego1_e", "ego2_v", "ego2_e",
            "lp_comm", "lp_size", "scoda_comm", "scoda_size",
            "num_nodes", "num_edges", "deg_q25", "deg_q50", "deg_q75"}


def reference_profile():
    return StructuralProfile(
        deg=12, cc=0.167, core=4, ego1_v=13, ego1_e=22, ego1_d=0.046,
        ego2_v=214, ego2_e=4103, ego2_d=0.181, pagerank=0.00084,
        lp_comm=5, lp_size=312, lp_dens=0.021,
        scoda_comm=8, scoda_size=189, scoda_dens=0.018,
    )


def reference_stats():
    return GraphStats(
        num_nodes=2708, num_edges=5429, avg_degree=4.01, transitivity=0.241,
        deg_q25=2, deg_q50=3, deg_q75=5, spectral_gap=1.23,
    )


class TestRenderFormat:
    def test_reference_line_byte_for_byte(self):
        assert render_prompt(reference_profile(), reference_stats()) == REFERENCE_LINE

    def test_reference_golden_file(self):
        assert (GOLDEN / "template.txt").read_text(encoding="utf-8") == REFERENCE_LINE + "\n"

    def test_hundred_profile_corpus_stable(self):
        header, rows = read_table(GOLDEN / "corpus_fields.tsv")
        expected = (GOLDEN / "corpus_prompts.txt").read_text(encoding="utf-8")
        rendered = []
        for row in rows:
            vals = {
                c: (int(v) if c in INT_COLS else float(v))
                for c, v in zip(header, row)
            }
            prof = StructuralProfile(**{c: vals[c] for c in PCOLS})
            stats = GraphStats(
                num_nodes=vals["num_nodes"], num_edges=vals["num_edges"],
                avg_degree=vals["avg_degree"], transitivity=vals["transitivity"],
                deg_q25=vals["deg_q25"], deg_q50=vals["deg_q50"],
                deg_q75=vals["deg_q75"], spectral_gap=vals["spec_gap"],
            )
            rendered.append(render_prompt(prof, stats))
        assert "".join(line + "\n" for line in rendered) == expected

    def test_rendering_is_deterministic(self):
        a = render_prompt(reference_profile(), reference_stats())
        b = render_prompt(reference_profile(), reference_stats())
        assert a == b


class TestSigfigFormat:
    @pytest.mark.parametrize(
        "value,expected",
        [
            (0.00084, "0.00084"),
            (1.0, "1.0"),
            (0.5, "0.50"),
            (0.1, "0.10"),
            (0.09999, "0.10"),
            (0.000369, "0.00037"),
            (0.99, "0.99"),
            (0.0049, "0.0049"),
            (1e-9, "0.0000000010"),
            (0.105, "0.10"),
            (0.95, "0.95"),
        ],
    )
    def test_two_significant_figures_plain_decimal(self, value, expected):
        assert format_sigfig2(value) == expected

    def test_nonpositive_and_nonfinite(self):
        assert format_sigfig2(0.0) == "0.0"
        assert format_sigfig2(-3.0) == "0.0"
        assert format_sigfig2(float("nan")) == "0.0"

    def test_never_scientific_notation(self):
        rng = np.random.default_rng(0)
        for x in 10.0 ** rng.uniform(-9, 0, 200):
            assert "e" not in format_sigfig2(x)


class TestHashedEncoder:
    def test_unit_norm_and_deterministic(self):
        text = REFERENCE_LINE
        a = encode_hashed(text)
        b = encode_hashed(text)
        np.testing.assert_array_equal(a, b)
        assert abs(np.linalg.norm(a) - 1.0) <= 1e-12
        assert a.shape == (CONTEXT_DIM,)

    @settings(max_examples=50, deadline=None)
    @given(st.text(max_size=200))
    def test_always_unit_norm(self, text):
        assert abs(np.linalg.norm(encode_hashed(text)) - 1.0) <= 1e-12

    def test_featureless_input_maps_to_first_basis_vector(self):
        for text in ("", "!!! ??? ***", "\t\n"):
            vec = encode_hashed(text)
            assert vec[0] == 1.0
            assert np.count_nonzero(vec) == 1

    def test_seed_changes_embedding(self):
        a = encode_hashed(REFERENCE_LINE, seed=42)
        b = encode_hashed(REFERENCE_LINE, seed=43)
        assert not np.array_equal(a, b)

    def test_name_value_pairs_matter_beyond_tokens(self):
        # same token multiset, different pairing
        a = encode_hashed("x=1 y=2")
        b = encode_hashed("x=2 y=1")
        assert not np.array_equal(a, b)

    def test_batch_encode_matches_single(self):
        texts = ["a=1 b", "deg=4 cc=0.5", ""]
        batch = encode_prompts(texts)
        for i, t in enumerate(texts):
            np.testing.assert_array_equal(batch[i], encode_hashed(t))


class TestContextPipeline:
    def test_shapes_and_norms(self):
        g = generate_sbm([15, 15], 0.3, 0.05, seed=2)
        ctx = context_embeddings(g, seed=42)
        assert ctx.shape == (30, CONTEXT_DIM)
        np.testing.assert_allclose(np.linalg.norm(ctx, axis=1), 1.0, atol=1e-12)

    def test_recomputation_invariance(self):
        g = generate_sbm([10, 10], 0.4, 0.05, seed=3)
        np.testing.assert_array_equal(
            context_embeddings(g, seed=42), context_embeddings(g, seed=42)
        )

    def test_load_context_round_trip_and_validation(self, tmp_path):
        g = generate_sbm([8], 0.4, 0.0, seed=1)
        ctx = context_embeddings(g)
        path = tmp_path / "ctx.bin"
        save_matrix(path, ctx)
        # float32 container: renormalized rows agree to storage precision
        np.testing.assert_allclose(load_context(path, g), ctx, atol=1e-6)
        bad = tmp_path / "bad.bin"
        save_matrix(bad, ctx[:, :10])
        with pytest.raises(DataError):
            load_context(bad, g)
        short = tmp_path / "short.bin"
        save_matrix(short, ctx[:5])
        with pytest.raises(DataError):
            load_context(short, g)

    def test_load_context_repairs_zero_rows(self, tmp_path):
        g = generate_sbm([4], 1.0, 0.0, seed=1)
        ctx = context_embeddings(g)
        ctx[2] = 0.0
        path = tmp_path / "ctx.bin"
        save_matrix(path, ctx)
        loaded = load_context(path, g)
        assert loaded[2, 0] == 1.0
        np.testing.assert_allclose(np.linalg.norm(loaded, axis=1), 1.0, atol=1e-12)
