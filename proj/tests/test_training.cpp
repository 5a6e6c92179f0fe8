#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/training.hpp"
#include "dpnmt/vocab.hpp"

using namespace dpnmt;

namespace {

ModelConfig small_config(Variant v, std::size_t vocab, std::size_t dim) {
    ModelConfig c;
    c.source_vocab_size = vocab;
    c.target_vocab_size = vocab;
    c.embedding_dim = dim;
    c.hidden_dim = dim;
    c.readout_dim = dim;
    c.reconstructor_hidden_dim = dim;
    c.variant = v;
    return c;
}

// Target = source; x-hat = source with a marker token in front.
std::vector<Triple> copy_corpus(std::size_t n, std::size_t vocab, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Triple> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> s(1 + rng.below(4));
        for (int& t : s) t = 5 + static_cast<int>(rng.below(vocab - 5));
        s.push_back(Vocabulary::kEos);
        std::vector<int> lab = s;
        lab.insert(lab.begin(), 4);
        out.push_back({s, s, lab});
    }
    return out;
}

double scalar_adadelta(double w, int steps, double rho, double eps, std::vector<double>* trace) {
    double eg = 0.0, ed = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double g = 2.0 * w;
        eg = rho * eg + (1 - rho) * g * g;
        const double d = -std::sqrt(ed + eps) / std::sqrt(eg + eps) * g;
        ed = rho * ed + (1 - rho) * d * d;
        w += d;
        if (trace) trace->push_back(w);
    }
    return w;
}

bool bit_equal(const ParameterSet& a, const ParameterSet& b) {
    if (a.names() != b.names()) return false;
    for (const auto& [name, t] : a) {
        const Tensor& u = b.at(name);
        if (u.shape != t.shape || std::memcmp(u.data.data(), t.data.data(), t.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adadelta with zero gradient only decays the accumulators") {
    ParameterSet p;
    p.set("w", Tensor::matrix(1, 3, {0.5, -0.25, 2.0}));
    OptimizerState st;
    st.mean_sq_grad["w"] = Tensor::matrix(1, 3, {0.4, 0.1, 0.0});
    st.mean_sq_delta["w"] = Tensor::matrix(1, 3, {0.2, 0.0, 0.3});
    const ParameterSet before = p;
    adadelta_update(p, {{"w", Tensor::zeros(1, 3)}}, st, 0.95, 1e-6);
    CHECK(bit_equal(p, before));
    CHECK(st.mean_sq_grad["w"].data[0] == doctest::Approx(0.38));
    CHECK(st.mean_sq_grad["w"].data[1] == doctest::Approx(0.095));
    CHECK(st.mean_sq_delta["w"].data[2] == doctest::Approx(0.285));
}

TEST_CASE("adadelta on f(w) = w^2 follows the scalar recurrence") {
    std::vector<double> trace;
    const double expected = scalar_adadelta(1.0, 200, 0.95, 1e-6, &trace);
    ParameterSet p;
    p.set("w", Tensor::matrix(1, 1, {1.0}));
    OptimizerState st;
    double prev = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double w = p.at("w").data[0];
        adadelta_update(p, {{"w", Tensor::matrix(1, 1, {2.0 * w})}}, st, 0.95, 1e-6);
        const double now = p.at("w").data[0];
        CHECK(std::abs(now) < std::abs(prev));
        CHECK(now == trace[static_cast<std::size_t>(i)]);
        prev = now;
    }
    CHECK(p.at("w").data[0] == expected);
    CHECK(std::abs(expected) < 0.5);
    for (double a : st.mean_sq_grad["w"].data) CHECK(a >= 0.0);
}

TEST_CASE("adadelta treats identical parameters identically and checks shapes") {
    ParameterSet p;
    p.set("a", Tensor::matrix(2, 2, {0.1, 0.2, 0.3, 0.4}));
    p.set("b", p.at("a"));
    OptimizerState st;
    const Tensor g = Tensor::matrix(2, 2, {0.5, -1.0, 0.0, 3.0});
    for (int i = 0; i < 5; ++i) adadelta_update(p, {{"a", g}, {"b", g}}, st, 0.9, 1e-6);
    CHECK(p.at("a") == p.at("b"));
    CHECK_THROWS_AS(adadelta_update(p, {{"a", Tensor::zeros(1, 4)}}, st, 0.9, 1e-6), ShapeError);
}

TEST_CASE("global norm clipping") {
    Gradients g{{"a", Tensor::matrix(1, 2, {3.0, 0.0})}, {"b", Tensor::matrix(1, 1, {4.0})}};
    CHECK(clip_global_norm(g, 1.0) == 5.0);
    CHECK(g["a"].data[0] == doctest::Approx(0.6));
    CHECK(g["b"].data[0] == doctest::Approx(0.8));
    CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
    CHECK(g["b"].data[0] == doctest::Approx(0.8));
}

TEST_CASE("length-bucketed batches cover the corpus once") {
    const auto corpus = copy_corpus(53, 12, 3);
    Rng rng(4);
    const auto batches = make_batches(corpus, 10, rng);
    CHECK(batches.size() == 6);
    std::vector<int> seen(corpus.size(), 0);
    for (const auto& b : batches) {
        CHECK(b.size() <= 10);
        for (std::size_t i : b) seen[i] += 1;
    }
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("training with forced zero gradients leaves parameters unchanged") {
    const ModelConfig cfg = small_config(Variant::Both, 12, 4);
    Rng rng(5);
    const ParameterSet init = init_parameters(cfg, rng);
    const auto corpus = copy_corpus(1, 12, 6);
    TrainConfig tc;
    tc.zero_gradients = true;
    const TrainResult r = train(corpus, corpus, cfg, tc, init, 1);
    CHECK(bit_equal(r.last, init));
    CHECK(r.log.size() == 2);
}

TEST_CASE("training rejects bad input") {
    const ModelConfig cfg = small_config(Variant::Baseline, 12, 4);
    Rng rng(7);
    const ParameterSet init = init_parameters(cfg, rng);
    const auto corpus = copy_corpus(4, 12, 8);
    CHECK_THROWS_AS(train({}, corpus, cfg, TrainConfig{}, init, 1), DataError);
    auto bad = corpus;
    bad[2].target.back() = 5;
    CHECK_THROWS_AS(train(bad, corpus, cfg, TrainConfig{}, init, 1), DataError);
    CHECK_THROWS_AS(train(corpus, corpus, small_config(Variant::Both, 12, 4), TrainConfig{}, init, 1), ShapeError);

    ParameterSet blown = init;
    blown.at("emb/source").data[7 * 4 + 1] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(corpus, corpus, cfg, TrainConfig{}, blown, 1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }
}

TEST_CASE("training is deterministic and independent of the worker count") {
    const ModelConfig cfg = small_config(Variant::Both, 14, 5);
    Rng rng(9);
    const ParameterSet init = init_parameters(cfg, rng);
    const auto corpus = copy_corpus(40, 14, 10);
    const auto tune = copy_corpus(8, 14, 11);
    TrainConfig tc;
    tc.batch_size = 20;
    const TrainResult a = train(corpus, tune, cfg, tc, init, 2);
    const TrainResult b = train(corpus, tune, cfg, tc, init, 2);
    tc.workers = 3;
    const TrainResult c = train(corpus, tune, cfg, tc, init, 2);
    CHECK(bit_equal(a.last, b.last));
    CHECK(bit_equal(a.best, b.best));
    CHECK(bit_equal(a.last, c.last));
    CHECK_FALSE(bit_equal(a.last, init));
    CHECK(a.log.size() == 3);
    CHECK(a.log[1].batches == 2);
    CHECK(a.log[1].loss_sums.count("enc_rec") == 1);
}

TEST_CASE("init_from_baseline copies the encoder-decoder exactly") {
    const ModelConfig base = small_config(Variant::Baseline, 12, 4);
    Rng rng(12);
    const ParameterSet baseline = init_parameters(base, rng);

    ModelConfig same = base;
    CHECK(bit_equal(init_from_baseline(baseline, same, 1), baseline));

    ModelConfig both = base;
    both.variant = Variant::Both;
    const ParameterSet p = init_from_baseline(baseline, both, 1);
    check_parameters(p, both);
    for (const auto& [name, t] : baseline) {
        CHECK(std::memcmp(p.at(name).data.data(), t.data.data(), t.size() * sizeof(double)) == 0);
    }
    for (const auto& [name, t] : p) {
        if (is_translation_param(name)) continue;
        for (double v : t.data) CHECK(std::abs(v) <= 0.08);
    }
    CHECK(bit_equal(p, init_from_baseline(baseline, both, 1)));

    ParameterSet partial = baseline;
    partial.erase("dec/out/Wo");
    partial.erase("enc/fwd/U");
    try {
        init_from_baseline(partial, both, 1);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dec/out/Wo") != std::string::npos);
        CHECK(msg.find("enc/fwd/U") != std::string::npos);
    }
}

TEST_CASE("stage-2 epoch 0 likelihood equals the baseline corpus likelihood") {
    ModelConfig base = small_config(Variant::Baseline, 14, 5);
    Rng rng(13);
    const auto corpus = copy_corpus(30, 14, 14);
    TrainConfig tc;
    tc.batch_size = 10;
    const TrainResult stage1 = train(corpus, corpus, base, tc, init_parameters(base, rng), 2);
    const double base_ll = corpus_loss(corpus, base, stage1.best).at("likelihood");

    ModelConfig both = base;
    both.variant = Variant::Both;
    const TrainResult stage2 = train(corpus, corpus, both, tc, init_from_baseline(stage1.best, both, 2), 1);
    CHECK(std::abs(stage2.log[0].loss_sums.at("likelihood") - base_ll) < 1e-10);
    CHECK(stage2.log[0].loss_sums.count("dec_rec") == 1);
    // One shared source embedding table, no reconstructor copies.
    std::size_t tables = 0;
    for (const auto& name : stage2.last.names()) tables += name.find("emb") != std::string::npos;
    CHECK(tables == 2);
}

TEST_CASE("checkpoints and the best pointer are written per epoch") {
    const ModelConfig cfg = small_config(Variant::Baseline, 12, 4);
    Rng rng(15);
    const auto corpus = copy_corpus(12, 12, 16);
    const auto dir = std::filesystem::temp_directory_path() / "dpnmt_train_test";
    std::filesystem::remove_all(dir);
    TrainHooks hooks;
    hooks.out_dir = dir;
    std::size_t calls = 0;
    hooks.on_epoch = [&](const EpochRecord&) { ++calls; };
    TrainConfig tc;
    tc.batch_size = 4;
    const TrainResult r = train(corpus, corpus, cfg, tc, init_parameters(cfg, rng), 2, hooks);
    CHECK(calls == 3);
    for (int e = 0; e <= 2; ++e) CHECK(std::filesystem::exists(dir / ("epoch-" + std::to_string(e) + ".ckpt")));
    std::ifstream best(dir / "best");
    std::string name;
    best >> name;
    CHECK(name == "epoch-" + std::to_string(r.best_epoch) + ".ckpt");
    CHECK(load_checkpoint(dir / name) == r.best);
    std::ifstream log(dir / "train.log");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        CHECK(line.rfind("epoch=", 0) == 0);
        ++lines;
    }
    CHECK(lines == 3);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a copy corpus is memorized") {
    const ModelConfig cfg = small_config(Variant::Baseline, 12, 32);
    Rng rng(17);
    const auto corpus = copy_corpus(200, 12, 18);
    // Adadelta starts with steps of about sqrt(eps), so a small corpus needs
    // many small batches to get going.
    TrainConfig tc;
    tc.batch_size = 1;
    tc.clip_norm = 5.0;
    const auto start = std::chrono::steady_clock::now();
    const TrainResult r = train(corpus, corpus, cfg, tc, init_parameters(cfg, rng), 30);
    std::size_t tokens = 0;
    for (const auto& t : corpus) tokens += t.target.size();
    const double final_nll = corpus_loss(corpus, cfg, r.last).at("likelihood") / static_cast<double>(tokens);
    MESSAGE("copy corpus per-token nll " << final_nll << " in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << "s");
    CHECK(final_nll < 0.1);

    // Epoch losses over the last 10 epochs never rise more than 5%.
    for (std::size_t e = 22; e <= 30; ++e) {
        CHECK(r.log[e].loss_sums.at("likelihood") <= 1.05 * r.log[e - 1].loss_sums.at("likelihood"));
    }
}
