#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dpnmt/corpus_eval.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"

using namespace dpnmt;

namespace {

Sentence words(const std::string& s) {
    Sentence out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::vector<Sentence> lines(std::initializer_list<const char*> l) {
    std::vector<Sentence> out;
    for (const char* s : l) out.push_back(words(s));
    return out;
}

double geo(std::initializer_list<double> p) {
    double log_sum = 0.0;
    for (double v : p) log_sum += std::log(v);
    return std::exp(log_sum / static_cast<double>(p.size()));
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("dpnmt_ce_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("standard grammar shape") {
    const SynthGrammar g = SynthGrammar::standard();
    CHECK_NOTHROW(g.validate());
    std::size_t dictionary = 0;
    for (const auto& [kind, list] : g.words) dictionary += list.size();
    CHECK(dictionary == 50);
    CHECK(g.pronouns.size() == 6);
    CHECK(g.templates.size() == 20);
    for (const auto& t : g.templates) {
        CHECK(t.slots.size() >= 3);
        CHECK(t.slots.size() <= 12);
    }
}

TEST_CASE("grammar validation") {
    SynthGrammar g = SynthGrammar::standard();
    g.drop_rate = 1.5;
    CHECK_THROWS_AS(g.validate(), DataError);
    g = SynthGrammar::standard();
    g.words['N'].push_back({"饭", "meal"});
    CHECK_THROWS_AS(g.validate(), DataError);
    g = SynthGrammar::standard();
    g.templates.push_back({"V P", {1, 0}});
    CHECK_THROWS_AS(g.validate(), DataError);
    g = SynthGrammar::standard();
    g.templates.clear();
    CHECK_THROWS_AS(synth_corpus(g, 5), DataError);
    CHECK_THROWS_AS(synth_corpus(SynthGrammar::standard(), 0), DataError);
}

TEST_CASE("drop rate 0 keeps every pronoun") {
    for (const auto& p : synth_corpus(SynthGrammar::standard(0.0, 3), 300)) {
        CHECK(p.labelled == p.source);
        CHECK(p.drops.empty());
        CHECK_NOTHROW(check_alignment(p.alignment, p.source.size(), p.target.size()));
    }
}

TEST_CASE("drop rate 1 removes every pronoun") {
    const SynthGrammar g = SynthGrammar::standard(1.0, 4);
    const PronounInventory inv = g.inventory();
    for (const auto& p : synth_corpus(g, 300)) {
        for (const auto& w : p.source) CHECK_FALSE(inv.is_source(w));
        CHECK(apply_insertions(p.source, p.drops).tokens == p.labelled);
        for (const auto& d : p.drops) CHECK(inv.is_target(p.target[static_cast<std::size_t>(d.target_index)]));
    }
}

TEST_CASE("empirical drop rate concentrates at 0.3") {
    const SynthGrammar g = SynthGrammar::standard(0.3, 5);
    const auto corpus = synth_corpus(g, 10000);
    std::size_t slots = 0, drops = 0;
    const PronounInventory inv = g.inventory();
    for (const auto& p : corpus) {
        for (const auto& w : p.labelled) slots += inv.is_source(w);
        drops += p.drops.size();
    }
    const double rate = static_cast<double>(drops) / static_cast<double>(slots);
    CHECK(std::abs(rate - 0.3) <= 0.02);
}

TEST_CASE("synthetic pairs are consistent") {
    const SynthGrammar g = SynthGrammar::standard(0.4, 6);
    const PronounInventory inv = g.inventory();
    for (const auto& p : synth_corpus(g, 500)) {
        CHECK(p.labelled.size() >= 3);
        CHECK(p.labelled.size() <= 12);
        CHECK(apply_insertions(p.source, p.drops).tokens == p.labelled);
        // Every target token except determiners and dropped pronouns is linked.
        std::size_t determiners = 0;
        for (const auto& w : p.target) determiners += w == g.determiner;
        CHECK(p.alignment.size() + p.drops.size() + determiners == p.target.size());
        CHECK(p.alignment.size() == p.source.size());
        // Projection from the gold links reproduces the gold positions.
        PronounLexicon lex;
        for (const auto& [s, t] : g.pronouns) lex.add(t, s, 1.0);
        const LabeledSentence projected = label_parallel(p.source, p.target, p.alignment, inv, lex);
        CHECK(projected.tokens == p.labelled);
    }
}

TEST_CASE("synthesis is reproducible") {
    const auto a = synth_corpus(SynthGrammar::standard(0.3, 9), 200);
    const auto b = synth_corpus(SynthGrammar::standard(0.3, 9), 200);
    const auto c = synth_corpus(SynthGrammar::standard(0.3, 10), 200);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].source == b[i].source);
        CHECK(a[i].target == b[i].target);
        CHECK(a[i].alignment == b[i].alignment);
        differs = differs || a[i].target != c[i].target;
    }
    CHECK(differs);
}

TEST_CASE("vocabulary construction") {
    const VocabBuild all = build_vocab({words("a a b"), words("c")}, 100);
    CHECK(all.coverage == 1.0);
    const VocabBuild one = build_vocab({words("a a b")}, 1);
    CHECK(one.vocab.contains("a"));
    CHECK_FALSE(one.vocab.contains("b"));
    CHECK(std::abs(one.coverage - 2.0 / 3.0) < 1e-15);
    CHECK_THROWS_AS(build_vocab({}, 5), DataError);

    const auto dir = temp_dir("vocab");
    std::vector<Sentence> corpus;
    for (const auto& p : synth_corpus(SynthGrammar::standard(), 200)) corpus.push_back(p.source);
    build_vocab(corpus, 30).vocab.save(dir / "a.txt");
    build_vocab(corpus, 30).vocab.save(dir / "b.txt");
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
}

TEST_CASE("DP rate statistics") {
    PronounInventory inv;
    inv.source = {"我", "他"};
    inv.target = {"i", "he"};
    SUBCASE("hand corpus") {
        const auto x = lines({"a b", "c", "d e", "f"});
        const auto y = lines({"I a he b", "he c I", "I d e he", "f I he"});
        const std::vector<std::vector<Insertion>> ins = {{{0, "我", 0}}, {}, {{2, "他", 3}}, {}};
        const CorpusStats st = dp_rate_stats(x, y, ins, inv);
        CHECK(st.target.pronouns == 8);
        CHECK(st.inserted == 2);
        CHECK(st.dp_rate == 0.25);
        CHECK(st.source.sentences == 4);
        CHECK(st.source.words == 6);
        CHECK(st.target.words == 14);
        CHECK(st.source.average_length == 1.5);
        CHECK(st.records().find("dp_rate=0.250000") != std::string::npos);
        CHECK(st.table().find("25.00%") != std::string::npos);
    }
    SUBCASE("no insertions") {
        const CorpusStats st = dp_rate_stats(lines({"他 a"}), lines({"he a"}), {{}}, inv);
        CHECK(st.dp_rate == 0.0);
        CHECK(st.source.pronouns == 1);
        CHECK_FALSE(st.no_target_pronouns);
    }
    SUBCASE("no target pronouns") {
        const CorpusStats st = dp_rate_stats(lines({"a"}), lines({"b"}), {{}}, inv);
        CHECK(st.dp_rate == 0.0);
        CHECK(st.no_target_pronouns);
    }
    SUBCASE("synthetic corpus matches its drop log exactly") {
        const SynthGrammar g = SynthGrammar::standard(0.3, 12);
        std::vector<Sentence> xs, ys;
        std::vector<std::vector<Insertion>> drops;
        std::size_t logged = 0, target_pronouns = 0;
        for (const auto& p : synth_corpus(g, 2000)) {
            xs.push_back(p.source);
            ys.push_back(p.target);
            drops.push_back(p.drops);
            logged += p.drops.size();
            for (const auto& w : p.labelled) target_pronouns += g.inventory().is_source(w);
        }
        const CorpusStats st = dp_rate_stats(xs, ys, drops, g.inventory());
        CHECK(st.inserted == logged);
        CHECK(st.target.pronouns == target_pronouns);
        CHECK(st.source.pronouns + logged == target_pronouns);
        CHECK(st.dp_rate == static_cast<double>(logged) / static_cast<double>(target_pronouns));
    }
    CHECK_THROWS_AS(dp_rate_stats(lines({"a"}), {}, {{}}, inv), DataError);
}

TEST_CASE("BLEU hand cases") {
    // Reference values agree with sacrebleu (tokenize=none, lowercase) where
    // its default smoothing does not apply.
    SUBCASE("worked example") {
        const BleuResult r = bleu(lines({"a b c d e"}), lines({"a b c d f"}));
        const double expected = 100.0 * geo({4.0 / 5, 3.0 / 4, 2.0 / 3, 1.0 / 2});
        CHECK(std::abs(r.score - expected) < 1e-9);
        CHECK(std::abs(r.score - 66.87) < 0.01);
        CHECK(r.matches == std::array<std::size_t, 4>{4, 3, 2, 1});
        CHECK(r.brevity_penalty == 1.0);
    }
    SUBCASE("brevity penalty") {
        const BleuResult r = bleu(lines({"a b c d"}), lines({"a b c d e f"}));
        CHECK(std::abs(r.score - 100.0 * std::exp(1.0 - 6.0 / 4.0)) < 1e-9);
        CHECK(std::abs(r.score - 60.65) < 0.01);
    }
    SUBCASE("corpus-level counts") {
        const BleuResult r = bleu(lines({"a b c d e", "x y z w"}), lines({"a b c d f", "x y z w v"}));
        const double expected = 100.0 * std::exp(1.0 - 10.0 / 9.0) * geo({8.0 / 9, 6.0 / 7, 4.0 / 5, 2.0 / 3});
        CHECK(std::abs(r.score - expected) < 1e-9);
        CHECK(std::abs(r.score - 71.44) < 0.01);
    }
    SUBCASE("interior mismatch") {
        const BleuResult r = bleu(lines({"a b c d e f g h"}), lines({"a b c d x f g h"}));
        CHECK(std::abs(r.score - 50.0) < 1e-9);
    }
    SUBCASE("case-insensitive") {
        CHECK(std::abs(bleu(lines({"A B C D E"}), lines({"a b c d f"})).score - 66.87) < 0.01);
    }
    SUBCASE("clipping and no 4-gram match give 0") {
        const BleuResult r = bleu(lines({"the the the the the the the"}), lines({"the cat is on the mat"}));
        CHECK(r.matches[0] == 2);
        CHECK(r.totals[0] == 7);
        CHECK(r.score == 0.0);
        CHECK(bleu(lines({"a b c"}), lines({"a b c"})).score == 0.0);
    }
    SUBCASE("format") {
        CHECK(bleu(lines({"a b c d"}), lines({"a b c d"})).format().rfind("BLEU = 100.00 4:4/3:3/2:2/1:1", 0) == 0);
    }
    CHECK_THROWS_AS(bleu({}, {}), DataError);
    CHECK_THROWS_AS(bleu(lines({"a"}), lines({"a", "b"})), DataError);
}

TEST_CASE("BLEU properties") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<Sentence> cand, ref;
        for (int i = 0; i < 12; ++i) {
            Sentence c, r;
            for (std::size_t k = 0, n = 4 + rng.below(6); k < n; ++k) r.push_back("w" + std::to_string(rng.below(6)));
            for (std::size_t k = 0, n = 4 + rng.below(6); k < n; ++k) c.push_back("w" + std::to_string(rng.below(6)));
            cand.push_back(c);
            ref.push_back(r);
        }
        CHECK(bleu(ref, ref).score == 100.0);
        const double s = bleu(cand, ref).score;
        CHECK(s >= 0.0);
        CHECK(s <= 100.0);
        std::vector<std::size_t> perm(cand.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<Sentence> pc, pr;
        for (std::size_t i : perm) {
            pc.push_back(cand[i]);
            pr.push_back(ref[i]);
        }
        CHECK(bleu(pc, pr).score == s);
    }
}

TEST_CASE("sentence BLEU smoothing") {
    CHECK(std::abs(sentence_bleu(words("a b c d"), words("a b c d")) - 100.0) < 1e-9);
    // 2 of 3 unigrams, no higher-order matches: (2/3 * 1/3 * 1/2 * 1/1)^(1/4).
    CHECK(std::abs(sentence_bleu(words("a x b"), words("a y b")) - 100.0 * geo({2.0 / 3, 1.0 / 3, 1.0 / 2, 1.0})) <
          1e-9);
    CHECK(sentence_bleu(words("x"), words("a")) == 0.0);
}

TEST_CASE("sign test") {
    const auto ref = lines({"a b c d", "e f g h", "i j k l"});
    const SignTestResult same = sign_test(ref, ref, ref);
    CHECK(same.all_ties);
    CHECK(same.p_value == 1.0);
    CHECK(same.ties == 3);

    const SignTestResult r = sign_test(ref, lines({"a b c x", "x f g h", "i j k l"}), ref);
    CHECK(r.wins == 2);
    CHECK(r.ties == 1);
    CHECK(r.p_value == 0.5);

    CHECK(std::abs(binomial_two_sided(10, 0) - 2.0 * std::pow(0.5, 10)) < 1e-15);
    CHECK(std::abs(binomial_two_sided(10, 0) - 0.00195) < 1e-5);
    CHECK(binomial_two_sided(5, 5) == 1.0);
    // P(X <= 2) for Bin(10, 1/2) = 56/1024, doubled.
    CHECK(std::abs(binomial_two_sided(2, 8) - 2.0 * 56.0 / 1024.0) < 1e-12);
    CHECK_THROWS_AS(sign_test(ref, lines({"a"}), ref), DataError);
}

TEST_CASE("dropped-pronoun token recall") {
    const auto refs = lines({"he saw he", "i ate", "she ran"});
    // Sentence 0: the second "he" was dropped; sentence 1: "i" was dropped.
    const std::vector<std::vector<Insertion>> drops = {{{2, "他", 2}}, {{0, "我", 0}}, {}};
    CHECK(dp_token_recall(refs, refs, drops).recall() == 1.0);
    const DpRecall r = dp_token_recall(lines({"he saw", "I ate", "ran"}), refs, drops);
    CHECK(r.dropped == 2);
    CHECK(r.matched == 1);
    const DpRecall extra = dp_token_recall(lines({"he he he he", "ate", "x"}), refs, drops);
    CHECK(extra.matched == 1);
    CHECK_THROWS_AS(dp_token_recall(refs, refs, {{{0, "我", 9}}, {}, {}}), DataError);
}

TEST_CASE("corpus and alignment files round trip") {
    const auto dir = temp_dir("io");
    const auto corpus = lines({"他 来 了", "", "a b"});
    write_corpus(dir / "c.txt", corpus);
    CHECK(read_corpus(dir / "c.txt") == corpus);
    const std::vector<Alignment> al = {{{0, 1}, {2, 0}}, {}, {{1, 1}}};
    write_alignments(dir / "a.txt", al);
    CHECK(read_alignments(dir / "a.txt") == al);
    std::ofstream(dir / "bad.txt") << "0-1\n1x2\n";
    CHECK_THROWS_WITH_AS(read_alignments(dir / "bad.txt"), doctest::Contains("bad.txt:2"), DataError);
    CHECK_THROWS_AS(read_corpus(dir / "missing.txt"), DataError);
}
