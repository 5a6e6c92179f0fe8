#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/model.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/training.hpp"

namespace dpnmt {

namespace {

constexpr const char* kNone = "NONE";

std::map<std::string, Shape> generator_shapes(const DpGeneratorConfig& c, std::size_t vocab,
                                              std::size_t labels) {
    const std::size_t E = c.embedding_dim, H = c.hidden_dim, F = c.feature_dim;
    return {
        {"dpg/emb", {vocab, E}},
        {"dpg/fwd/W", {E, 3 * H}},
        {"dpg/fwd/U", {H, 3 * H}},
        {"dpg/fwd/b", {1, 3 * H}},
        {"dpg/bwd/W", {E, 3 * H}},
        {"dpg/bwd/U", {H, 3 * H}},
        {"dpg/bwd/b", {1, 3 * H}},
        {"dpg/feat/W", {4 * H, F}},
        {"dpg/feat/b", {1, F}},
        {"dpg/out/W", {F, labels}},
        {"dpg/out/b", {1, labels}},
    };
}

std::vector<int> wrap(const Vocabulary& vocab, const Sentence& x) {
    std::vector<int> ids{Vocabulary::kBos};
    for (const auto& w : x) ids.push_back(vocab.id(w));
    ids.push_back(Vocabulary::kEos);
    return ids;
}

// Logits for every gap, rows ordered t * batch + b for gap t; gap t of a
// sentence exists when token t + 1 of its wrapped sequence does.
Var gap_logits(Graph& g, const DpGeneratorModel& m, const PaddedBatch& seq) {
    const std::size_t H = m.config.hidden_dim;
    const std::size_t B = seq.batch;
    const std::size_t T = seq.steps;
    auto P = [&](const std::string& n) { return g.param(n, m.params.at(n)); };
    const Var emb = lookup(P("dpg/emb"), seq.ids);
    std::vector<Var> fwd(T), bwd(T);
    auto mask_at = [&](std::size_t t) { return std::span<const double>(seq.mask).subspan(t * B, B); };
    {
        const Var proj = matmul(emb, P("dpg/fwd/W")) + P("dpg/fwd/b");
        const Var U = P("dpg/fwd/U");
        Var h = g.constant(Tensor::zeros(B, H));
        for (std::size_t t = 0; t < T; ++t) {
            h = mask_blend(gru_cell(slice_rows(proj, t * B, B), h, U, H), h, mask_at(t));
            fwd[t] = h;
        }
    }
    {
        const Var proj = matmul(emb, P("dpg/bwd/W")) + P("dpg/bwd/b");
        const Var U = P("dpg/bwd/U");
        Var h = g.constant(Tensor::zeros(B, H));
        for (std::size_t t = T; t-- > 0;) {
            h = mask_blend(gru_cell(slice_rows(proj, t * B, B), h, U, H), h, mask_at(t));
            bwd[t] = h;
        }
    }
    std::vector<Var> feats;
    for (std::size_t t = 0; t + 1 < T; ++t) {
        const Var parts[] = {fwd[t], bwd[t], fwd[t + 1], bwd[t + 1]};
        feats.push_back(concat_cols(parts));
    }
    const Var hidden = tanh(matmul(concat_rows(feats), P("dpg/feat/W")) + P("dpg/feat/b"));
    return matmul(hidden, P("dpg/out/W")) + P("dpg/out/b");
}

// Gold label per gap (first insertion wins when a gap holds several).
std::vector<int> gap_labels(const LabeledSentence& s, std::size_t gaps,
                            const std::map<std::string, int>& label_id) {
    std::vector<int> out(gaps, 0);
    std::vector<bool> set(gaps, false);
    for (const auto& ins : s.insertions) {
        if (ins.position >= gaps || set[ins.position]) continue;
        const auto it = label_id.find(ins.token);
        if (it == label_id.end()) {
            throw DataError("inserted token '" + ins.token + "' is not in the pronoun inventory");
        }
        out[ins.position] = it->second;
        set[ins.position] = true;
    }
    return out;
}

}  // namespace

std::map<std::string, std::string> DpGeneratorConfig::to_kv() const {
    std::ostringstream r;
    r.precision(17);
    r << init_range;
    return {
        {"embedding_dim", std::to_string(embedding_dim)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"feature_dim", std::to_string(feature_dim)},
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"vocab_cap", std::to_string(vocab_cap)},
        {"init_range", r.str()},
        {"seed", std::to_string(seed)},
    };
}

DpGeneratorConfig DpGeneratorConfig::from_kv(const std::map<std::string, std::string>& kv) {
    DpGeneratorConfig c;
    auto size = [&](const char* k, std::size_t& out) {
        if (auto it = kv.find(k); it != kv.end()) out = std::stoul(it->second);
    };
    size("embedding_dim", c.embedding_dim);
    size("hidden_dim", c.hidden_dim);
    size("feature_dim", c.feature_dim);
    size("epochs", c.epochs);
    size("batch_size", c.batch_size);
    size("vocab_cap", c.vocab_cap);
    if (auto it = kv.find("init_range"); it != kv.end()) c.init_range = std::stod(it->second);
    if (auto it = kv.find("seed"); it != kv.end()) c.seed = std::stoull(it->second);
    return c;
}

DpGeneratorModel DpGeneratorModel::create(Vocabulary vocab, const std::vector<std::string>& pronouns,
                                          const DpGeneratorConfig& cfg) {
    if (cfg.embedding_dim == 0 || cfg.hidden_dim == 0 || cfg.feature_dim == 0 || cfg.batch_size == 0) {
        throw DataError("dp generator: dimensions and batch size must be > 0");
    }
    DpGeneratorModel m;
    m.config = cfg;
    m.vocab = std::move(vocab);
    m.labels.push_back(kNone);
    for (const auto& p : pronouns) {
        if (std::find(m.labels.begin(), m.labels.end(), p) == m.labels.end()) m.labels.push_back(p);
    }
    Rng rng(cfg.seed);
    for (const auto& [name, shape] : generator_shapes(cfg, m.vocab.size(), m.labels.size())) {
        m.params.set(name, uniform_tensor(shape[0], shape[1], cfg.init_range, rng));
    }
    return m;
}

std::vector<std::vector<double>> DpGeneratorModel::gap_distributions(const Sentence& x) const {
    Graph g(false);
    const PaddedBatch seq = PaddedBatch::make({wrap(vocab, x)});
    const Var probs = softmax(gap_logits(g, *this, seq));
    std::vector<std::vector<double>> out;
    const auto v = probs.value();
    const std::size_t K = labels.size();
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * K),
                         v.begin() + static_cast<std::ptrdiff_t>((r + 1) * K));
    }
    return out;
}

void DpGeneratorModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    vocab.save(dir / "vocab.txt");
    std::ofstream labels_out(dir / "labels.txt");
    for (const auto& l : labels) labels_out << l << '\n';
    std::ofstream cfg_out(dir / "config.txt");
    for (const auto& [k, v] : config.to_kv()) cfg_out << k << '=' << v << '\n';
    save_checkpoint(params, dir / "params.ckpt");
}

DpGeneratorModel DpGeneratorModel::load(const std::filesystem::path& dir) {
    DpGeneratorModel m;
    std::map<std::string, std::string> kv;
    std::ifstream cfg_in(dir / "config.txt");
    if (!cfg_in) {
        throw DataError("no DP generator model in " + dir.string());
    }
    for (std::string line; std::getline(cfg_in, line);) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    m.config = DpGeneratorConfig::from_kv(kv);
    m.vocab = Vocabulary::load(dir / "vocab.txt");
    std::ifstream labels_in(dir / "labels.txt");
    for (std::string line; std::getline(labels_in, line);) {
        if (!line.empty()) m.labels.push_back(line);
    }
    if (m.labels.empty() || m.labels[0] != kNone) {
        throw DataError(dir.string() + "/labels.txt must start with NONE");
    }
    m.params = load_checkpoint(dir / "params.ckpt");
    for (const auto& [name, shape] : generator_shapes(m.config, m.vocab.size(), m.labels.size())) {
        if (!m.params.contains(name) || m.params.at(name).shape != shape) {
            throw ShapeError("DP generator checkpoint: tensor " + name + " missing or mis-shaped");
        }
    }
    return m;
}

DpGeneratorModel train_dp_generator(const std::vector<LabeledSentence>& corpus,
                                    const std::vector<std::string>& source_pronouns,
                                    const DpGeneratorConfig& cfg) {
    std::size_t insertions = 0;
    std::vector<Sentence> xs;
    for (const auto& s : corpus) {
        insertions += s.insertions.size();
        xs.push_back(s.strip());
    }
    if (insertions == 0) {
        throw DataError("train_dp_generator: the corpus has no inserted pronouns");
    }
    DpGeneratorModel m = DpGeneratorModel::create(build_vocab(xs, cfg.vocab_cap).vocab, source_pronouns, cfg);
    std::map<std::string, int> label_id;
    for (std::size_t k = 0; k < m.labels.size(); ++k) label_id[m.labels[k]] = static_cast<int>(k);

    std::vector<std::vector<int>> ids, labels;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        ids.push_back(wrap(m.vocab, xs[i]));
        labels.push_back(gap_labels(corpus[i], xs[i].size() + 1, label_id));
    }
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(cfg.seed + 1);
    OptimizerState opt;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::vector<int>> batch;
            for (std::size_t k = start; k < end; ++k) batch.push_back(ids[order[k]]);
            const PaddedBatch seq = PaddedBatch::make(batch);
            const std::size_t B = seq.batch;
            std::vector<int> targets((seq.steps - 1) * B, 0);
            std::vector<double> weights((seq.steps - 1) * B, 0.0);
            for (std::size_t b = 0; b < B; ++b) {
                const auto& lab = labels[order[start + b]];
                for (std::size_t t = 0; t < lab.size(); ++t) {
                    targets[t * B + b] = lab[t];
                    weights[t * B + b] = 1.0;
                }
            }
            Graph g;
            const Var loss = scale(sum(nll_rows(gap_logits(g, m, seq), targets, weights)),
                                   1.0 / static_cast<double>(B));
            g.backward(loss);
            Gradients grads = g.gradients();
            clip_global_norm(grads, 5.0);
            adadelta_update(m.params, grads, opt, 0.95, 1e-6);
        }
    }
    return m;
}

LabeledSentence label_monolingual(const Sentence& x, const DpGeneratorModel& model,
                                  double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw DataError("label_monolingual: threshold must be in (0, 1)");
    }
    std::vector<Insertion> ins;
    if (model.labels.size() > 1) {
        const auto dist = model.gap_distributions(x);
        auto is_pronoun = [&](std::size_t i) {
            return std::find(model.labels.begin() + 1, model.labels.end(), x[i]) != model.labels.end();
        };
        for (std::size_t gap = 0; gap <= x.size(); ++gap) {
            // A gap next to an overt pronoun is already filled.
            if ((gap > 0 && is_pronoun(gap - 1)) || (gap < x.size() && is_pronoun(gap))) continue;
            const auto& p = dist[gap];
            const auto best = std::max_element(p.begin() + 1, p.end()) - p.begin();
            if (p[static_cast<std::size_t>(best)] > threshold && p[static_cast<std::size_t>(best)] > p[0]) {
                ins.push_back({gap, model.labels[static_cast<std::size_t>(best)], -1});
            }
        }
    }
    return apply_insertions(x, std::move(ins));
}

double gap_accuracy(const DpGeneratorModel& model, const std::vector<LabeledSentence>& corpus) {
    std::map<std::string, int> label_id;
    for (std::size_t k = 0; k < model.labels.size(); ++k) label_id[model.labels[k]] = static_cast<int>(k);
    std::size_t correct = 0, total = 0;
    for (const auto& s : corpus) {
        const Sentence x = s.strip();
        const auto gold = gap_labels(s, x.size() + 1, label_id);
        const auto dist = model.gap_distributions(x);
        for (std::size_t g = 0; g < gold.size(); ++g) {
            const auto best = std::max_element(dist[g].begin(), dist[g].end()) - dist[g].begin();
            correct += best == gold[g];
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace dpnmt
