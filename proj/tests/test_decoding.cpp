#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "dpnmt/decoding.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/seq2seq.hpp"

using namespace dpnmt;

namespace {

ModelConfig config(Variant v, std::size_t src_vocab, std::size_t tgt_vocab, std::size_t dim) {
    ModelConfig c;
    c.source_vocab_size = src_vocab;
    c.target_vocab_size = tgt_vocab;
    c.embedding_dim = dim;
    c.hidden_dim = dim;
    c.readout_dim = dim;
    c.reconstructor_hidden_dim = dim;
    c.variant = v;
    c.init_range = 1.0;
    return c;
}

std::vector<int> greedy(const ParameterSet& p, const ModelConfig& cfg, const std::vector<int>& x,
                        std::size_t max_len) {
    const EncoderStates enc = encode(p, cfg, x);
    std::vector<double> s = enc.init_state;
    std::vector<int> out;
    int prev = Vocabulary::kBos;
    while (true) {
        const StepResult r = decode_step(p, cfg, prev, s, enc);
        if (out.size() + 1 == max_len) {
            out.push_back(Vocabulary::kEos);
            return out;
        }
        const int best = static_cast<int>(std::max_element(r.distribution.begin(), r.distribution.end()) -
                                          r.distribution.begin());
        out.push_back(best);
        if (best == Vocabulary::kEos) return out;
        s = r.state;
        prev = best;
    }
}

// Every sequence of at most max_len tokens that ends with </s> and has no
// earlier </s>.
void enumerate(std::size_t vocab, std::size_t max_len, std::vector<int>& prefix,
               std::vector<std::vector<int>>& out) {
    for (std::size_t v = 0; v < vocab; ++v) {
        const int tok = static_cast<int>(v);
        if (tok != Vocabulary::kEos && prefix.size() + 1 == max_len) continue;
        prefix.push_back(tok);
        if (tok == Vocabulary::kEos) {
            out.push_back(prefix);
        } else {
            enumerate(vocab, max_len, prefix, out);
        }
        prefix.pop_back();
    }
}

}  // namespace

TEST_CASE("beam size 1 is greedy decoding") {
    const ModelConfig cfg = config(Variant::Baseline, 10, 9, 6);
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const ParameterSet p = init_parameters(cfg, rng);
        const std::vector<int> x = {4, static_cast<int>(4 + rng.below(6)), 3};
        const auto hyps = beam_search(p, cfg, x, 1, 8);
        REQUIRE(hyps.size() == 1);
        CHECK(hyps[0].tokens == greedy(p, cfg, x, 8));
        CHECK(std::abs(hyps[0].log_likelihood - log_likelihood(p, cfg, x, hyps[0].tokens)) < 1e-10);
    }
}

TEST_CASE("a deterministic model yields a single zero-cost hypothesis") {
    const ModelConfig cfg = config(Variant::Baseline, 8, 8, 4);
    Rng rng(2);
    ParameterSet p = init_parameters(cfg, rng);
    for (auto* name : {"dec/out/Wo", "dec/out/bo"}) {
        std::fill(p.at(name).data.begin(), p.at(name).data.end(), 0.0);
    }
    p.at("dec/out/bo").data[Vocabulary::kEos] = 1e3;
    const auto hyps = beam_search(p, cfg, std::vector<int>{4, 5, 3}, 10, 6);
    REQUIRE(hyps.size() == 1);
    CHECK(hyps[0].tokens == std::vector<int>{Vocabulary::kEos});
    CHECK(hyps[0].log_likelihood == 0.0);
}

TEST_CASE("beam 64 matches exhaustive enumeration on vocab 4, max_len 3") {
    std::vector<std::vector<int>> all;
    std::vector<int> prefix;
    enumerate(4, 3, prefix, all);
    REQUIRE(all.size() == 13);
    Rng rng(3);
    for (int model = 0; model < 50; ++model) {
        const ModelConfig cfg = config(Variant::Baseline, 6, 4, 3);
        const ParameterSet p = init_parameters(cfg, rng);
        const std::vector<int> x = {static_cast<int>(4 + rng.below(2)), 3};
        double best = -1e300;
        std::vector<int> best_seq;
        for (const auto& y : all) {
            const double s = log_likelihood(p, cfg, x, y) / static_cast<double>(y.size());
            if (s > best) {
                best = s;
                best_seq = y;
            }
        }
        const auto hyps = beam_search(p, cfg, x, 64, 3);
        CHECK(hyps.size() == 13);
        CHECK(hyps[0].tokens == best_seq);
        CHECK(std::abs(hyps[0].score() - best) < 1e-10);
        for (std::size_t k = 1; k < hyps.size(); ++k) CHECK(hyps[k].score() <= hyps[k - 1].score());

        // Smaller beams never beat the exhaustive optimum, and on these
        // models enlarging the beam never lowered the top score.
        double prev = -1e300;
        for (std::size_t k = 1; k <= 6; ++k) {
            const double top = beam_search(p, cfg, x, k, 3)[0].score();
            CHECK(top <= hyps[0].score());
            CHECK(top >= prev);
            prev = top;
        }
    }
}

TEST_CASE("hypothesis invariants") {
    const ModelConfig cfg = config(Variant::Baseline, 12, 12, 5);
    Rng rng(4);
    const ParameterSet p = init_parameters(cfg, rng);
    const auto hyps = beam_search(p, cfg, std::vector<int>{5, 6, 7, 3}, 5, 7);
    CHECK(hyps.size() == 5);
    for (std::size_t k = 0; k < hyps.size(); ++k) {
        CHECK(hyps[k].finished);
        CHECK(hyps[k].tokens.back() == Vocabulary::kEos);
        CHECK(std::count(hyps[k].tokens.begin(), hyps[k].tokens.end(), Vocabulary::kEos) == 1);
        CHECK(hyps[k].tokens.size() <= 7);
        CHECK(hyps[k].log_likelihood <= 0.0);
        if (k > 0) CHECK(hyps[k].score() <= hyps[k - 1].score());
    }
    CHECK_THROWS_AS(beam_search(p, cfg, std::vector<int>{5, 3}, 0, 5), DataError);
}

TEST_CASE("corpus translation keeps input order for any worker count") {
    const ModelConfig cfg = config(Variant::Baseline, 12, 12, 5);
    Rng rng(5);
    const ParameterSet p = init_parameters(cfg, rng);
    std::vector<std::vector<int>> sources;
    for (int i = 0; i < 7; ++i) sources.push_back({static_cast<int>(4 + i), 3});
    const auto one = translate_corpus(p, cfg, sources, 3, 1);
    const auto three = translate_corpus(p, cfg, sources, 3, 3);
    REQUIRE(one.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        REQUIRE(one[i].size() == three[i].size());
        for (std::size_t k = 0; k < one[i].size(); ++k) {
            CHECK(one[i][k].tokens == three[i][k].tokens);
            CHECK(one[i][k].log_likelihood == three[i][k].log_likelihood);
        }
    }
}

TEST_CASE("combine_scores on hand-set scores") {
    const double ll[] = {-1, -2, -3};
    const double dec[] = {-5, -1, -4};
    const auto order = combine_scores(ll, {}, dec, {0.0, 1.0});
    CHECK(order[0] == 1);
    CHECK(combine_scores(ll, {}, dec, {0.0, 0.0}) == std::vector<std::size_t>{0, 1, 2});
    CHECK_THROWS_AS(combine_scores(ll, {}, dec, {-1.0, 0.0}), DataError);
}

TEST_CASE("reranking") {
    const ModelConfig cfg = config(Variant::Both, 12, 12, 5);
    Rng rng(6);
    const ParameterSet p = init_parameters(cfg, rng);
    const std::vector<int> x = {5, 6, 7, 3};
    const std::vector<int> x_hat = {4, 5, 6, 7, 3};
    auto kbest = beam_search(p, cfg, x, 6, 7);
    REQUIRE(kbest.size() == 6);

    SUBCASE("zero weights keep the likelihood order") {
        const RerankResult r = rerank(kbest, x, x_hat, p, cfg, {0.0, 0.0});
        for (std::size_t k = 0; k < r.order.size(); ++k) CHECK(r.order[k] == k);
    }
    SUBCASE("encoder-side weights never change the argmax") {
        for (double lambda : {0.5, 1.0, 2.0}) {
            const RerankResult r = rerank(kbest, x, x_hat, p, cfg, {lambda, 0.0});
            CHECK(r.best().hyp.tokens == kbest[0].tokens);
            for (const auto& c : r.table) {
                CHECK(std::memcmp(&*c.enc_rec, &*r.table[0].enc_rec, sizeof(double)) == 0);
            }
        }
    }
    SUBCASE("scores match standalone reconstruction") {
        const RerankResult r = rerank(kbest, x, x_hat, p, cfg, {1.0, 1.0});
        const double enc = reconstruct_log_score(p, cfg, ReconstructorRole::Encoder, encode(p, cfg, x).h, x_hat);
        for (const auto& c : r.table) {
            CHECK(std::abs(*c.enc_rec - enc) < 1e-10);
            const auto states = decoder_trace(p, cfg, x, c.hyp.tokens).states;
            const double dec = reconstruct_log_score(p, cfg, ReconstructorRole::Decoder, states, x_hat);
            CHECK(std::abs(*c.dec_rec - dec) < 1e-10);
            const double expected = c.hyp.score() + (enc + dec) / 5.0;
            CHECK(std::abs(c.overall - expected) < 1e-10);
        }
        for (std::size_t k = 1; k < r.order.size(); ++k) {
            CHECK(r.table[r.order[k]].overall <= r.table[r.order[k - 1]].overall);
        }
    }
    SUBCASE("duplicates are dropped") {
        kbest.push_back(kbest[2]);
        CHECK(rerank(kbest, x, x_hat, p, cfg, {1.0, 1.0}).table.size() == 6);
    }
    SUBCASE("weights for an absent reconstructor are rejected") {
        ModelConfig enc_only = cfg;
        enc_only.variant = Variant::EncRec;
        CHECK_THROWS_AS(rerank(kbest, x, x_hat, p, enc_only, {1.0, 1.0}), DataError);
        CHECK_NOTHROW(rerank(kbest, x, x_hat, p, enc_only, {1.0, 0.0}));
        ModelConfig base = cfg;
        base.variant = Variant::Baseline;
        CHECK_THROWS_AS(rerank(kbest, x, x_hat, p, base, {0.5, 0.0}), DataError);
    }
    SUBCASE("k-best output") {
        Vocabulary v;
        for (int i = 4; i < 12; ++i) v.add("w" + std::to_string(i));
        const RerankResult r = rerank(kbest, x, x_hat, p, cfg, {1.0, 1.0});
        std::ostringstream os;
        write_kbest(os, 7, r, v);
        std::istringstream in(os.str());
        std::string line;
        std::size_t rank = 0;
        while (std::getline(in, line)) {
            CHECK(line.rfind("7\t" + std::to_string(rank) + "\t", 0) == 0);
            CHECK(std::count(line.begin(), line.end(), '\t') == 5);
            ++rank;
        }
        CHECK(rank == 6);
    }
}
