"""
Unit Tests for the Data Pipeline

Tests tokenization, vocabulary construction, word-vector loading, padding
and batching, dataset files and the synthetic answer-pair generator.
"""

import threading

import numpy as np
import pytest

from app.data.batching import encode_pairs, make_batches, pad_truncate, prefetch
from app.data.dataset import escape_field, format_pair, read_dataset, unescape_field, write_dataset
from app.data.embeddings import load_embeddings
from app.data.synthetic import (
    concepts_in,
    generate_synthetic_dataset,
    keyword_overlap_label,
    keyword_token,
    negative_ceiling,
    positive_threshold,
)
from app.data.text import tokenize
from app.data.vocabulary import PAD_ID, UNK_ID, Vocabulary, build_vocab
from app.exceptions import ConfigError, DataError, DatasetFormatError, EmbeddingFormatError
from app.schemas.grading import AnswerPair, SyntheticSpec


def pair(pair_id, student, reference, label=1):
    return AnswerPair(id=pair_id, student_text=student, reference_text=reference, label=label)


@pytest.fixture
def small_vocab():
    return Vocabulary(["cell", "energy", "light"])


class TestTokenize:
    """Test tokenize"""

    def test_lowercases_and_splits_punctuation(self):
        """Test the basic example"""
        assert tokenize("The cat.") == ["the", "cat", "."]

    def test_collapses_whitespace(self):
        """Test that repeated spaces do not produce empty tokens"""
        assert tokenize("A  B") == ["a", "b"]

    def test_empty_text(self):
        """Test that empty text gives no tokens"""
        assert tokenize("") == []
        assert tokenize("   \t ") == []

    def test_idempotent_on_random_strings(self):
        """Test tokenize(join(tokenize(t))) == tokenize(t) on 100 strings"""
        rng = np.random.default_rng(0)
        alphabet = list("abcXYZ019 .,;!?'-()\t") + ["é", "ß"]
        for _ in range(100):
            text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 30))))
            tokens = tokenize(text)
            assert tokenize(" ".join(tokens)) == tokens


class TestVocabulary:
    """Test Vocabulary and build_vocab"""

    def test_empty_corpus_has_reserved_tokens(self):
        """Test that an empty corpus yields only PAD and UNK"""
        vocab = build_vocab([])

        assert len(vocab) == 2
        assert vocab.lookup("<pad>") == PAD_ID
        assert vocab.lookup("<unk>") == UNK_ID

    def test_count_then_alphabetical_order(self):
        """Test that 'a a b' gives a=2 and b=3"""
        vocab = build_vocab([pair("1", "a a b", "a")])

        assert vocab.lookup("a") == 2
        assert vocab.lookup("b") == 3

    def test_order_independent(self):
        """Test that a shuffled corpus gives the identical vocabulary"""
        corpus = [pair(str(i), f"w{i % 3} x{i % 5}", f"w{i % 2} z") for i in range(20)]
        shuffled = [corpus[i] for i in np.random.default_rng(1).permutation(20)]

        assert build_vocab(corpus) == build_vocab(shuffled)

    def test_min_count_drops_rare_tokens(self):
        """Test that tokens below min_count map to UNK"""
        vocab = build_vocab([pair("1", "a a b", "c a")], min_count=2)

        assert vocab.ordinary_tokens() == ["a"]
        assert vocab.lookup("b") == UNK_ID

    def test_save_load_round_trip(self, tmp_path, small_vocab):
        """Test that a saved vocabulary loads back identical"""
        path = tmp_path / "vocab.txt"
        small_vocab.save(path)

        assert Vocabulary.load(path) == small_vocab

    def test_duplicate_token_raises(self):
        """Test that a repeated token is rejected"""
        with pytest.raises(DataError):
            Vocabulary(["a", "a"])

    def test_load_without_reserved_header_raises(self, tmp_path):
        """Test that a file missing PAD/UNK lines is rejected"""
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n", encoding="utf-8")

        with pytest.raises(DataError):
            Vocabulary.load(path)


class TestLoadEmbeddings:
    """Test load_embeddings"""

    def test_full_coverage_copies_rows(self, tmp_path, small_vocab):
        """Test that covered tokens get the file values exactly"""
        path = tmp_path / "vectors.txt"
        path.write_text("cell 0.5 -1.25\nenergy 1 2\nlight 3e-1 0\n", encoding="utf-8")
        table = load_embeddings(path, small_vocab, 2, np.random.default_rng(0))

        assert table.coverage == 1.0
        np.testing.assert_array_equal(table.vectors[small_vocab.lookup("cell")], [0.5, -1.25])
        np.testing.assert_array_equal(table.vectors[small_vocab.lookup("light")], [0.3, 0.0])
        np.testing.assert_array_equal(table.vectors[PAD_ID], [0.0, 0.0])

    def test_empty_file_gives_random_rows(self, tmp_path, small_vocab):
        """Test that an empty file leaves coverage 0 and small random rows"""
        path = tmp_path / "vectors.txt"
        path.write_text("", encoding="utf-8")
        table = load_embeddings(path, small_vocab, 4, np.random.default_rng(0))

        assert table.coverage == 0.0
        np.testing.assert_array_equal(table.vectors[PAD_ID], 0.0)
        assert np.all(np.abs(table.vectors[1:]) <= 0.1)
        assert np.all(table.vectors[1:] != 0.0)

    def test_header_line_accepted(self, tmp_path, small_vocab):
        """Test that a '<count> <dim>' first line is skipped"""
        path = tmp_path / "vectors.txt"
        path.write_text("1 2\ncell 1 1\n", encoding="utf-8")
        table = load_embeddings(path, small_vocab, 2, np.random.default_rng(0))

        assert table.coverage == pytest.approx(1 / 3)

    def test_inconsistent_width_names_line(self, tmp_path, small_vocab):
        """Test that a short vector raises with its line number"""
        path = tmp_path / "vectors.txt"
        path.write_text("cell 1 1\nenergy 1\n", encoding="utf-8")

        with pytest.raises(EmbeddingFormatError) as exc_info:
            load_embeddings(path, small_vocab, 2, np.random.default_rng(0))
        assert exc_info.value.line_number == 2

    def test_non_numeric_component(self, tmp_path, small_vocab):
        """Test that an unparseable value raises EmbeddingFormatError"""
        path = tmp_path / "vectors.txt"
        path.write_text("cell 1 x\n", encoding="utf-8")

        with pytest.raises(EmbeddingFormatError):
            load_embeddings(path, small_vocab, 2, np.random.default_rng(0))

    def test_missing_file(self, tmp_path, small_vocab):
        """Test that a missing file raises DataError"""
        with pytest.raises(DataError):
            load_embeddings(tmp_path / "absent.txt", small_vocab, 2, np.random.default_rng(0))


class TestPadTruncate:
    """Test pad_truncate and encode_pairs"""

    def test_pads_short_sequence(self, small_vocab):
        """Test that 2 tokens with L=4 pad with PAD"""
        ids, mask = pad_truncate(["cell", "light"], small_vocab, 4)

        assert ids.tolist() == [2, 4, 0, 0]
        assert mask.tolist() == [True, True, False, False]

    def test_truncates_to_first_tokens(self, small_vocab):
        """Test that 6 tokens with L=4 keep the first 4"""
        ids, mask = pad_truncate(["cell", "energy", "light", "cell", "energy", "light"], small_vocab, 4)

        assert ids.tolist() == [2, 3, 4, 2]
        assert mask.all()

    def test_oov_maps_to_unk(self, small_vocab):
        """Test that unknown tokens get UNK and stay unmasked"""
        ids, mask = pad_truncate(["plasma"], small_vocab, 3)

        assert ids.tolist() == [UNK_ID, PAD_ID, PAD_ID]
        assert mask.tolist() == [True, False, False]

    def test_empty_answer_becomes_single_unk(self, small_vocab):
        """Test that no tokens still leaves one attendable position"""
        ids, mask = pad_truncate([], small_vocab, 3)

        assert ids.tolist() == [UNK_ID, PAD_ID, PAD_ID]
        assert mask.sum() == 1

    def test_mask_matches_non_pad_ids(self, small_vocab):
        """Test that masks are True exactly where ids are not PAD"""
        batch = encode_pairs([pair("1", "cell light", "energy"), pair("2", "x y z w", "cell", 0)], small_vocab, 3)

        np.testing.assert_array_equal(batch.student_mask, batch.student_ids != PAD_ID)
        np.testing.assert_array_equal(batch.reference_mask, batch.reference_ids != PAD_ID)
        assert batch.labels.tolist() == [1, 0]
        assert batch.pair_ids == ["1", "2"]


class TestMakeBatches:
    """Test make_batches and prefetch"""

    @pytest.fixture
    def pairs(self):
        return [pair(f"p{i}", f"cell {i}", "energy light", i % 2) for i in range(10)]

    def test_batch_sizes(self, pairs, small_vocab):
        """Test that 10 pairs with B=4 give batches of 4, 4 and 2"""
        batches = list(make_batches(pairs, small_vocab, 4, 4, np.random.default_rng(0)))

        assert [len(b) for b in batches] == [4, 4, 2]

    def test_same_seed_same_order(self, pairs, small_vocab):
        """Test deterministic shuffling"""
        first = [b.pair_ids for b in make_batches(pairs, small_vocab, 4, 3, np.random.default_rng(9))]
        second = [b.pair_ids for b in make_batches(pairs, small_vocab, 4, 3, np.random.default_rng(9))]

        assert first == second

    def test_every_pair_exactly_once(self, pairs, small_vocab):
        """Test that the batches cover the dataset exactly once"""
        ids = [i for b in make_batches(pairs, small_vocab, 4, 3, np.random.default_rng(2)) for i in b.pair_ids]

        assert sorted(ids) == sorted(p.id for p in pairs)

    def test_unshuffled_keeps_order(self, pairs, small_vocab):
        """Test that shuffle=False preserves input order"""
        ids = [i for b in make_batches(pairs, small_vocab, 4, 3, shuffle=False) for i in b.pair_ids]

        assert ids == [p.id for p in pairs]

    def test_invalid_arguments(self, pairs, small_vocab):
        """Test that B < 1 or a missing generator raise ValueError"""
        with pytest.raises(ValueError):
            list(make_batches(pairs, small_vocab, 4, 0, np.random.default_rng(0)))
        with pytest.raises(ValueError):
            list(make_batches(pairs, small_vocab, 4, 2))

    def test_prefetch_preserves_sequence(self, pairs, small_vocab):
        """Test that prefetched batches equal inline batches"""
        inline = [b.pair_ids for b in make_batches(pairs, small_vocab, 4, 3, np.random.default_rng(4))]
        threaded = [b.pair_ids for b in prefetch(make_batches(pairs, small_vocab, 4, 3, np.random.default_rng(4)), 2)]

        assert threaded == inline

    def test_prefetch_runs_on_producer_thread(self):
        """Test that items are produced off the consuming thread"""
        consumer = threading.get_ident()

        def produce():
            for i in range(3):
                yield threading.get_ident(), i

        produced = list(prefetch(produce(), maxsize=1))

        assert [i for _, i in produced] == [0, 1, 2]
        assert all(ident != consumer for ident, _ in produced)

    def test_prefetch_reraises_producer_error(self):
        """Test that a producer exception reaches the consumer"""

        def failing():
            yield 1
            raise DataError("broken batch")

        with pytest.raises(DataError, match="broken batch"):
            list(prefetch(failing(), maxsize=2))

    @pytest.mark.parametrize("fails", [False, True])
    def test_prefetch_abandoned_early_stops_producer(self, fails):
        """Test that closing the consumer early ends the producer while the queue is full"""

        def produce():
            yield from range(3)
            if fails:
                raise DataError("late failure")

        stream = prefetch(produce(), maxsize=1)
        assert next(stream) == 0
        stream.close()

        assert not any(t.name == "batch-producer" and t.is_alive() for t in threading.enumerate())


class TestDatasetFiles:
    """Test read_dataset and write_dataset"""

    def test_write_then_read(self, tmp_path):
        """Test that a written dataset reads back equal"""
        pairs = [pair("a", "x y", "z", 1), pair("b", "q", "r s", 0)]
        path = tmp_path / "data" / "train.tsv"

        assert write_dataset(pairs, path) == 2
        assert read_dataset(path) == pairs

    def test_special_characters_escaped(self, tmp_path):
        """Test that tabs, newlines and backslashes survive a round trip"""
        tricky = pair("t\\1", "tab\there", "line\nbreak\r\\n", 1)
        path = tmp_path / "tricky.tsv"
        write_dataset([tricky], path)
        raw = path.read_bytes()

        assert raw.count(b"\n") == 1
        assert raw.count(b"\t") == 3
        assert read_dataset(path) == [tricky]

    def test_escape_examples(self):
        """Test the escape table"""
        assert escape_field("a\tb") == "a\\tb"
        assert escape_field("back\\slash") == "back\\\\slash"
        assert unescape_field("a\\tb\\n") == "a\tb\n"
        assert format_pair(pair("1", "s", "r", 0)) == "1\t0\ts\tr"

    def test_three_fields_names_line(self, tmp_path):
        """Test that a short line raises with its line number"""
        path = tmp_path / "bad.tsv"
        path.write_text("a\t1\tx\ty\nb\t0\tonly\n", encoding="utf-8")

        with pytest.raises(DatasetFormatError) as exc_info:
            read_dataset(path)
        assert exc_info.value.line_number == 2
        assert ":2:" in str(exc_info.value)

    @pytest.mark.parametrize(
        "line",
        ["a\t2\tx\ty", "a\t1\t\ty", "a\t1\tx\\q\ty"],
        ids=["bad-label", "empty-text", "bad-escape"],
    )
    def test_malformed_lines(self, tmp_path, line):
        """Test that invalid labels, empty texts and bad escapes are rejected"""
        path = tmp_path / "bad.tsv"
        path.write_text(line + "\n", encoding="utf-8")

        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing dataset raises DataError"""
        with pytest.raises(DataError):
            read_dataset(tmp_path / "absent.tsv")


class TestSyntheticGenerator:
    """Test generate_synthetic_dataset"""

    def spec(self, **overrides):
        values = dict(num_pairs=200, num_references=10, keywords_per_reference=5, reference_length=12)
        values.update(overrides)
        return SyntheticSpec(**values)

    def test_labels_balanced(self):
        """Test that N pairs contain exactly N/2 positives"""
        pairs = generate_synthetic_dataset(self.spec(), np.random.default_rng(0))

        assert len(pairs) == 200
        assert sum(p.label for p in pairs) == 100

    def test_keyword_rule_is_exact_without_noise(self):
        """Test that the keyword-overlap rule classifies every pair at noise 0"""
        spec = self.spec(synonym_rate=0.5)
        pairs = generate_synthetic_dataset(spec, np.random.default_rng(1))

        assert all(keyword_overlap_label(p, spec.keywords_per_reference) == p.label for p in pairs)

    def test_noise_flips_some_pairs(self):
        """Test that a positive noise rate makes the rule imperfect"""
        spec = self.spec(noise_rate=0.3)
        pairs = generate_synthetic_dataset(spec, np.random.default_rng(2))
        agreement = np.mean([keyword_overlap_label(p, 5) == p.label for p in pairs])

        assert 0.5 < agreement < 0.95

    def test_same_seed_byte_identical_file(self, tmp_path):
        """Test that the same seed writes the same bytes"""
        write_dataset(generate_synthetic_dataset(self.spec(), np.random.default_rng(3)), tmp_path / "a.tsv")
        write_dataset(generate_synthetic_dataset(self.spec(), np.random.default_rng(3)), tmp_path / "b.tsv")

        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()

    def test_reference_holds_every_keyword(self):
        """Test that each reference contains its k keyword concepts"""
        pairs = generate_synthetic_dataset(self.spec(), np.random.default_rng(4))

        assert all(len(concepts_in(p.reference_text)) == 5 for p in pairs)

    def test_thresholds(self):
        """Test the positive and negative concept thresholds"""
        assert positive_threshold(5) == 4
        assert negative_ceiling(5) == 2
        assert keyword_token(3, 1) == "k3x1"
        assert keyword_token(3, 1, 2) == "k3x1s2"

    def test_infeasible_spec_raises(self):
        """Test that k larger than the reference length raises ConfigError"""
        with pytest.raises(ConfigError):
            generate_synthetic_dataset(self.spec(keywords_per_reference=13), np.random.default_rng(0))

    def test_odd_pair_count_raises(self):
        """Test that an odd pair count cannot be balanced"""
        with pytest.raises(ConfigError):
            generate_synthetic_dataset(self.spec(num_pairs=201), np.random.default_rng(0))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
