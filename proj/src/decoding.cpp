#include "dpnmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <thread>

#include "dpnmt/error.hpp"
#include "dpnmt/seq2seq.hpp"

namespace dpnmt {

double Hypothesis::score() const {
    return tokens.empty() ? log_likelihood : log_likelihood / static_cast<double>(tokens.size());
}

std::size_t default_max_len(std::size_t source_len) { return 2 * source_len + 5; }

namespace {

struct Candidate {
    std::size_t parent;
    int token;
    double ll;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_search(const ParameterSet& params, const ModelConfig& cfg,
                                    std::span<const int> x, std::size_t beam_size,
                                    std::size_t max_len) {
    if (beam_size < 1 || max_len < 1) {
        throw DataError("beam_search: beam_size and max_len must be >= 1");
    }
    check_parameters(params, [&] {
        ModelConfig base = cfg;
        base.variant = Variant::Baseline;
        return base;
    }());
    Graph g(false);
    Network net(g, params, cfg);
    const EncoderOut enc = net.encode(PaddedBatch::make({std::vector<int>(x.begin(), x.end())}));
    const std::size_t H = cfg.hidden_dim;
    const std::size_t V = cfg.target_vocab_size;

    std::vector<Hypothesis> live(1);
    live[0].state.assign(enc.init_state.value().begin(), enc.init_state.value().end());
    std::vector<Hypothesis> finished;

    for (std::size_t t = 1; t <= max_len && !live.empty() && finished.size() < beam_size; ++t) {
        const std::size_t n = live.size();
        std::vector<int> prev(n);
        std::vector<double> states;
        states.reserve(n * H);
        for (std::size_t i = 0; i < n; ++i) {
            prev[i] = live[i].tokens.empty() ? Vocabulary::kBos : live[i].tokens.back();
            states.insert(states.end(), live[i].state.begin(), live[i].state.end());
        }
        const Memory mem = net.tile(enc.memory, n);
        const StepOut step = net.decode_step(prev, g.constant(n, H, std::move(states)), mem);
        const auto logits = step.logits.value();
        const auto new_states = step.state.value();

        std::vector<Candidate> cands;
        const bool force_eos = t == max_len;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = logits.data() + i * V;
            const double m = *std::max_element(row, row + V);
            double z = 0.0;
            for (std::size_t v = 0; v < V; ++v) z += std::exp(row[v] - m);
            const double lse = m + std::log(z);
            for (std::size_t v = 0; v < V; ++v) {
                if (force_eos && static_cast<int>(v) != Vocabulary::kEos) continue;
                const double lp = row[v] - lse;
                // Underflowed probabilities are not hypotheses.
                if (std::exp(lp) == 0.0) continue;
                cands.push_back({i, static_cast<int>(v), live[i].log_likelihood + lp});
            }
        }
        const std::size_t room = beam_size - finished.size();
        const std::size_t keep = std::min(room, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.ll != b.ll) return a.ll > b.ll;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Hypothesis> next;
        for (std::size_t k = 0; k < keep; ++k) {
            const Candidate& c = cands[k];
            Hypothesis h;
            h.tokens = live[c.parent].tokens;
            h.tokens.push_back(c.token);
            h.log_likelihood = c.ll;
            h.state.assign(new_states.begin() + static_cast<std::ptrdiff_t>(c.parent * H),
                           new_states.begin() + static_cast<std::ptrdiff_t>((c.parent + 1) * H));
            h.finished = c.token == Vocabulary::kEos;
            (h.finished ? finished : next).push_back(std::move(h));
        }
        live = std::move(next);
    }
    std::sort(finished.begin(), finished.end(), better);
    if (finished.size() > beam_size) finished.resize(beam_size);
    return finished;
}

std::vector<std::vector<Hypothesis>> translate_corpus(const ParameterSet& params,
                                                      const ModelConfig& cfg,
                                                      const std::vector<std::vector<int>>& sources,
                                                      std::size_t beam_size, std::size_t workers) {
    std::vector<std::vector<Hypothesis>> out(sources.size());
    std::vector<std::exception_ptr> errors(sources.size());
    auto work = [&](std::size_t w, std::size_t stride) {
        for (std::size_t i = w; i < sources.size(); i += stride) {
            try {
                out[i] = beam_search(params, cfg, sources[i], beam_size, default_max_len(sources[i].size()));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, sources.size()));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w, workers);
        for (auto& t : threads) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

void RerankWeights::validate() const {
    if (!(lambda_enc >= 0.0) || !(lambda_dec >= 0.0)) {
        throw DataError("rerank weights must be non-negative");
    }
}

std::vector<std::size_t> combine_scores(std::span<const double> likelihood,
                                        std::span<const double> enc, std::span<const double> dec,
                                        const RerankWeights& w, std::vector<double>* overall) {
    w.validate();
    const std::size_t n = likelihood.size();
    if ((!enc.empty() && enc.size() != n) || (!dec.empty() && dec.size() != n)) {
        throw ShapeError("combine_scores: score lists differ in length");
    }
    std::vector<double> total(n);
    for (std::size_t i = 0; i < n; ++i) {
        total[i] = likelihood[i];
        if (!enc.empty()) total[i] += w.lambda_enc * enc[i];
        if (!dec.empty()) total[i] += w.lambda_dec * dec[i];
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
    if (overall) *overall = std::move(total);
    return order;
}

RerankResult rerank(const std::vector<Hypothesis>& kbest, std::span<const int> x,
                    std::span<const int> x_hat, const ParameterSet& params,
                    const ModelConfig& cfg, const RerankWeights& weights) {
    weights.validate();
    if (kbest.empty()) {
        throw DataError("rerank: empty candidate list");
    }
    check_ends_with_eos(x_hat, "labelled source");
    const bool enc = has_enc_rec(cfg.variant);
    const bool dec = has_dec_rec(cfg.variant);
    if (weights.lambda_enc != 0.0 && !enc) {
        throw DataError("rerank: lambda_enc is nonzero but the " + to_string(cfg.variant) +
                        " model has no encoder-side reconstructor");
    }
    if (weights.lambda_dec != 0.0 && !dec) {
        throw DataError("rerank: lambda_dec is nonzero but the " + to_string(cfg.variant) +
                        " model has no decoder-side reconstructor");
    }
    check_parameters(params, cfg);

    RerankResult r;
    std::set<std::vector<int>> seen;
    for (const auto& h : kbest) {
        if (seen.insert(h.tokens).second) r.table.push_back({h, std::nullopt, std::nullopt, 0.0});
    }
    const std::size_t n = r.table.size();
    const std::vector<int> src(x.begin(), x.end());
    const std::vector<int> lab(x_hat.begin(), x_hat.end());

    if (enc) {
        // Depends on x only: computed once and shared by every candidate.
        const double score = reconstruct_log_score(params, cfg, ReconstructorRole::Encoder,
                                                   encode(params, cfg, src).h, lab);
        for (auto& c : r.table) c.enc_rec = score;
    }
    if (dec) {
        Graph g(false);
        Network net(g, params, cfg);
        std::vector<std::vector<int>> xs(n, src), ys, ls(n, lab);
        for (const auto& c : r.table) ys.push_back(c.hyp.tokens);
        const PaddedBatch target = PaddedBatch::make(ys);
        const EncoderOut e = net.encode(PaddedBatch::make(xs));
        const DecoderOut d = net.decode(e, target);
        const Memory mem = net.make_memory("dec_rec", d.stacked_states, n, target.steps, d.mask);
        const DecoderOut rec = net.reconstruct(ReconstructorRole::Decoder, mem, PaddedBatch::make(ls));
        for (std::size_t i = 0; i < n; ++i) r.table[i].dec_rec = -rec.sentence_nll.value()[i];
    }

    const double xlen = static_cast<double>(lab.size());
    std::vector<double> ll(n), es, ds;
    for (std::size_t i = 0; i < n; ++i) {
        ll[i] = r.table[i].hyp.score();
        if (enc) es.push_back(*r.table[i].enc_rec / xlen);
        if (dec) ds.push_back(*r.table[i].dec_rec / xlen);
    }
    std::vector<double> overall;
    r.order = combine_scores(ll, es, ds, weights, &overall);
    for (std::size_t i = 0; i < n; ++i) r.table[i].overall = overall[i];
    return r;
}

void write_kbest(std::ostream& out, std::size_t sentence, const RerankResult& r,
                 const Vocabulary& target_vocab) {
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return std::string(buf);
    };
    for (std::size_t rank = 0; rank < r.order.size(); ++rank) {
        const ScoredCandidate& c = r.table[r.order[rank]];
        char ll[64];
        std::snprintf(ll, sizeof ll, "%.6f", c.hyp.log_likelihood);
        std::string words;
        for (const auto& w : target_vocab.decode(c.hyp.tokens)) {
            if (!words.empty()) words += ' ';
            words += w;
        }
        out << sentence << '\t' << rank << '\t' << ll << '\t' << opt(c.enc_rec) << '\t'
            << opt(c.dec_rec) << '\t' << words << '\n';
    }
}

}  // namespace dpnmt
