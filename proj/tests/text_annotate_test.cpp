#include <filesystem>
#include <random>

#include "doctest.h"
#include "vbg/annotate.hpp"
#include "vbg/text.hpp"

using namespace vbg;
namespace fs = std::filesystem;

namespace {

Vocabulary toy_vocab() {
    return Vocabulary({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "ab", "##cd", "a", "##b", "##c", "x"});
}

Document words_doc(const std::vector<std::string>& texts) {
    Document doc;
    doc.id = "w";
    doc.width = 100;
    doc.height = 20;
    doc.image = Tensor({1, 20, 100}, 1.0);
    double x = 0;
    for (const std::string& t : texts) {
        doc.words.push_back({t, {x, 2, x + 8, 6}, 0});
        x += 10;
    }
    return doc;
}

}  // namespace

TEST_CASE("vocabulary enforces special tokens and round-trips through disk") {
    CHECK_THROWS(Vocabulary({"[CLS]", "[SEP]", "[PAD]"}));
    CHECK_THROWS(Vocabulary({"[SEP]", "[CLS]", "[PAD]", "[UNK]"}));
    CHECK_THROWS(Vocabulary({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "a", "a"}));

    Vocabulary v = toy_vocab();
    CHECK(v.cls_id() == 0);
    CHECK(v.pad_id() == 2);
    CHECK(v.id_of("##cd") == 5);
    CHECK(v.id_of("zz") == -1);

    const fs::path p = fs::temp_directory_path() / "vbg_vocab.txt";
    v.save(p.string());
    Vocabulary back = Vocabulary::load(p.string());
    CHECK(back.pieces() == v.pieces());
    fs::remove(p);
}

TEST_CASE("vocabulary induction is deterministic and capped") {
    std::vector<std::string> corpus = {"total", "total", "total", "date", "date", "tot"};
    Vocabulary a = Vocabulary::build(corpus, 40);
    Vocabulary b = Vocabulary::build(corpus, 40);
    CHECK(a.pieces() == b.pieces());
    CHECK(a.pieces()[0] == std::string("[CLS]"));
    CHECK(a.size() <= 40);
    // every corpus word stays tokenizable without UNK
    TokenSequence seq = tokenize_words(corpus, a);
    for (int id : seq.token_ids) CHECK(id != a.unk_id());

    // the cap limits merges but never truncates the seed alphabet: this
    // corpus seeds 4 specials + 7 single-char symbols = 11 pieces
    Vocabulary tight = Vocabulary::build(corpus, 11);
    CHECK(tight.size() == 11);
    for (const std::string& p : tight.pieces()) {
        const std::string body = p.rfind("##", 0) == 0 ? p.substr(2) : p;
        if (p[0] != '[') CHECK(body.size() == 1);  // no merges happened
    }
}

TEST_CASE("greedy longest-match tokenization with whole-word UNK") {
    Vocabulary v = toy_vocab();
    TokenSequence seq = tokenize_words({"abcd", "ab", "zz", "ab?"}, v);
    // "abcd" -> ab ##cd (longest match beats a/##b/##c)
    // "ab?"  -> no piece covers '?' -> whole word UNK
    std::vector<int> expect = {4, 5, 4, 3, 3};
    CHECK(seq.token_ids == expect);
    CHECK(seq.word_index == std::vector<int>{0, 0, 1, 2, 3});
    CHECK(seq.num_words == 4);
}

TEST_CASE("chunker: exact layout, M=3 fixture, count property, round-trip") {
    Vocabulary v = toy_vocab();
    std::mt19937_64 rng(4);

    TokenSequence three;
    three.token_ids = {4, 5, 6};
    three.word_index = {0, 1, 2};
    three.num_words = 3;
    std::vector<Chunk> chunks = chunk(three, v);
    REQUIRE(chunks.size() == 1);
    REQUIRE(chunks[0].token_ids.size() == static_cast<std::size_t>(kChunkLen));
    CHECK(chunks[0].token_ids[0] == v.cls_id());
    CHECK(chunks[0].token_ids[4] == v.sep_id());
    CHECK(chunks[0].pad_count == 507);
    for (int i = 5; i < kChunkLen; ++i) CHECK(chunks[0].token_ids[i] == v.pad_id());

    TokenSequence empty;
    CHECK(chunk(empty, v).size() == 1);  // one all-pad chunk

    for (int trial = 0; trial < 30; ++trial) {
        const int m = std::uniform_int_distribution<int>(1, 2000)(rng);
        TokenSequence seq;
        for (int i = 0; i < m; ++i) {
            seq.token_ids.push_back(std::uniform_int_distribution<int>(4, 9)(rng));
            seq.word_index.push_back(i);
        }
        seq.num_words = m;
        std::vector<Chunk> cs = chunk(seq, v);
        CHECK(static_cast<int>(cs.size()) == (m + kChunkPayload - 1) / kChunkPayload);
        std::vector<int> concat;
        for (const Chunk& c : cs)
            for (int i = c.payload_begin; i < c.payload_end; ++i)
                concat.push_back(c.token_ids[static_cast<std::size_t>(1 + i - c.payload_begin)]);
        CHECK(concat == seq.token_ids);
    }
}

TEST_CASE("overlapping windows cover every token the expected number of times") {
    Vocabulary v = toy_vocab();
    TokenSequence seq;
    for (int i = 0; i < 10; ++i) {
        seq.token_ids.push_back(4);
        seq.word_index.push_back(i);
    }
    seq.num_words = 10;
    std::vector<Chunk> cs = chunk(seq, v, 4, 2);
    std::vector<int> cover(10, 0);
    for (const Chunk& c : cs)
        for (int i = c.payload_begin; i < c.payload_end; ++i) ++cover[static_cast<std::size_t>(i)];
    for (int i = 2; i < 10; ++i) CHECK(cover[static_cast<std::size_t>(i)] <= 2);
    for (int i = 0; i < 10; ++i) CHECK(cover[static_cast<std::size_t>(i)] >= 1);
    CHECK_THROWS(chunk(seq, v, 4, 5));  // stride > window
}

TEST_CASE("normalize_text switches") {
    MatchOptions all;
    // punctuation is stripped only at the outer ends of the raw string, so a
    // trailing space shields the "!" and interior punctuation always stays
    CHECK(normalize_text("  Hello  WORLD!", all) == "hello world");
    CHECK(normalize_text("!!Total:", all) == "total");
    CHECK(normalize_text("  Hello,  WORLD! ", all) == "hello, world!");
    MatchOptions keep_case = all;
    keep_case.lowercase = false;
    CHECK(normalize_text("Hello", keep_case) == "Hello");
    MatchOptions keep_punct = all;
    keep_punct.strip_punct = false;
    CHECK(normalize_text("world!", keep_punct) == "world!");
}

TEST_CASE("field matching: exact, earliest, fuzzy, unmatched") {
    LabelSet labels{{"date", "total"}, {}};
    Document doc = words_doc({"Total:", "12.50", "repeat", "12.50", "Date:", "07/11/2021"});

    SUBCASE("exact match labels the span, earliest occurrence wins") {
        MatchResult res = match_field_annotations(doc, {{1, "12.50"}}, labels);
        CHECK(res.report[0].status == "matched");
        CHECK(res.report[0].matched_word_indices == std::vector<int>{1});
        CHECK(res.word_labels == std::vector<int>{2, 1, 2, 2, 2, 2});
    }
    SUBCASE("multi-word field spans consecutive words") {
        // "Date:" the word normalizes to "date", so the field text without
        // the colon matches exactly; with the colon only the fuzzy pass fires
        MatchResult res = match_field_annotations(doc, {{0, "Date 07/11/2021"}}, labels);
        CHECK(res.report[0].status == "matched");
        CHECK(res.word_labels[4] == 0);
        CHECK(res.word_labels[5] == 0);
        MatchResult fuzzy = match_field_annotations(doc, {{0, "Date: 07/11/2021"}}, labels);
        CHECK(fuzzy.report[0].status == "matched_fuzzy");
    }
    SUBCASE("normalization bridges case and punctuation") {
        MatchResult res = match_field_annotations(doc, {{0, "total"}}, labels);
        CHECK(res.report[0].status == "matched");
        CHECK(res.word_labels[0] == 0);
    }
    SUBCASE("edit-distance fallback tolerates one typo per word") {
        MatchResult res = match_field_annotations(doc, {{0, "07/11/2O21"}}, labels);
        CHECK(res.report[0].status == "matched_fuzzy");
        CHECK(res.word_labels[5] == 0);
        MatchOptions strict;
        strict.edit_distance_fallback = false;
        MatchResult none = match_field_annotations(doc, {{0, "07/11/2O21"}}, labels, strict);
        CHECK(none.report[0].status == "unmatched");
    }
    SUBCASE("unmatched fields are reported with a note, never dropped") {
        MatchResult res = match_field_annotations(doc, {{1, "99.99"}}, labels);
        REQUIRE(res.report.size() == 1);
        CHECK(res.report[0].status == "unmatched");
        CHECK(!res.report[0].note.empty());
        for (int l : res.word_labels) CHECK(l == labels.other_label());
    }
    SUBCASE("empty field text is a validation error") {
        CHECK_THROWS_AS(match_field_annotations(doc, {{0, "   "}}, labels), ValidationError);
    }
}
