#include "dpnmt/model.hpp"

#include <algorithm>
#include <sstream>

#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::EncRec: return "enc-rec";
        case Variant::DecRec: return "dec-rec";
        case Variant::Both: return "both";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    if (name == "baseline") return Variant::Baseline;
    if (name == "enc-rec") return Variant::EncRec;
    if (name == "dec-rec") return Variant::DecRec;
    if (name == "both") return Variant::Both;
    throw DataError("unknown variant '" + name + "' (expected baseline, enc-rec, dec-rec, both)");
}

bool has_enc_rec(Variant v) { return v == Variant::EncRec || v == Variant::Both; }
bool has_dec_rec(Variant v) { return v == Variant::DecRec || v == Variant::Both; }

std::string reconstructor_prefix(ReconstructorRole role) {
    return role == ReconstructorRole::Encoder ? "enc_rec" : "dec_rec";
}

bool is_translation_param(const std::string& name) {
    return name.rfind("enc_rec/", 0) != 0 && name.rfind("dec_rec/", 0) != 0;
}

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw DataError(std::string("model config: ") + what + " must be > 0");
    };
    positive(source_vocab_size, "source_vocab_size");
    positive(target_vocab_size, "target_vocab_size");
    positive(embedding_dim, "embedding_dim");
    positive(hidden_dim, "hidden_dim");
    positive(readout_dim, "readout_dim");
    positive(reconstructor_hidden_dim, "reconstructor_hidden_dim");
    positive(max_train_length, "max_train_length");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw DataError("model config: dropout_rate must be in [0, 1)");
    }
    if (!(init_range > 0.0)) {
        throw DataError("model config: init_range must be > 0");
    }
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    auto num = [](double x) {
        std::ostringstream os;
        os.precision(17);
        os << x;
        return os.str();
    };
    return {
        {"source_vocab_size", std::to_string(source_vocab_size)},
        {"target_vocab_size", std::to_string(target_vocab_size)},
        {"embedding_dim", std::to_string(embedding_dim)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"readout_dim", std::to_string(readout_dim)},
        {"reconstructor_hidden_dim", std::to_string(reconstructor_hidden_dim)},
        {"max_train_length", std::to_string(max_train_length)},
        {"dropout_rate", num(dropout_rate)},
        {"init_range", num(init_range)},
        {"variant", to_string(variant)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto size = [&](const char* key, std::size_t& out) {
        if (auto it = kv.find(key); it != kv.end()) out = std::stoul(it->second);
    };
    auto real = [&](const char* key, double& out) {
        if (auto it = kv.find(key); it != kv.end()) out = std::stod(it->second);
    };
    size("source_vocab_size", c.source_vocab_size);
    size("target_vocab_size", c.target_vocab_size);
    size("embedding_dim", c.embedding_dim);
    size("hidden_dim", c.hidden_dim);
    size("readout_dim", c.readout_dim);
    size("reconstructor_hidden_dim", c.reconstructor_hidden_dim);
    size("max_train_length", c.max_train_length);
    real("dropout_rate", c.dropout_rate);
    real("init_range", c.init_range);
    if (auto it = kv.find("variant"); it != kv.end()) c.variant = parse_variant(it->second);
    return c;
}

// ---------------------------------------------------------------- parameters

namespace {

void add_attentive_decoder(std::map<std::string, Shape>& out, const std::string& p,
                           std::size_t emb, std::size_t init_in, std::size_t mem_dim,
                           std::size_t hidden, std::size_t readout, std::size_t vocab) {
    out[p + "/init/W"] = {init_in, hidden};
    out[p + "/init/b"] = {1, hidden};
    out[p + "/att/W"] = {hidden, hidden};
    out[p + "/att/U"] = {mem_dim, hidden};
    out[p + "/att/b"] = {1, hidden};
    out[p + "/att/v"] = {hidden, 1};
    out[p + "/gru/W"] = {emb + mem_dim, 3 * hidden};
    out[p + "/gru/U"] = {hidden, 3 * hidden};
    out[p + "/gru/b"] = {1, 3 * hidden};
    out[p + "/out/Wy"] = {emb, readout};
    out[p + "/out/Ws"] = {hidden, readout};
    out[p + "/out/Wc"] = {mem_dim, readout};
    out[p + "/out/b"] = {1, readout};
    out[p + "/out/Wo"] = {readout, vocab};
    out[p + "/out/bo"] = {1, vocab};
}

ParameterSet draw(const std::map<std::string, Shape>& shapes, double range, Rng& rng) {
    ParameterSet p;
    for (const auto& [name, shape] : shapes) {
        p.set(name, uniform_tensor(shape[0], shape[1], range, rng));
    }
    return p;
}

}  // namespace

std::map<std::string, Shape> reconstructor_shapes(const ModelConfig& c, ReconstructorRole role) {
    std::map<std::string, Shape> out;
    const std::size_t mem = role == ReconstructorRole::Encoder ? 2 * c.hidden_dim : c.hidden_dim;
    add_attentive_decoder(out, reconstructor_prefix(role), c.embedding_dim, mem, mem,
                          c.reconstructor_hidden_dim, c.readout_dim, c.source_vocab_size);
    return out;
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
    const std::size_t E = c.embedding_dim;
    const std::size_t H = c.hidden_dim;
    std::map<std::string, Shape> out;
    out["emb/source"] = {c.source_vocab_size, E};
    out["emb/target"] = {c.target_vocab_size, E};
    for (const char* dir : {"enc/fwd", "enc/bwd"}) {
        out[std::string(dir) + "/W"] = {E, 3 * H};
        out[std::string(dir) + "/U"] = {H, 3 * H};
        out[std::string(dir) + "/b"] = {1, 3 * H};
    }
    add_attentive_decoder(out, "dec", E, H, 2 * H, H, c.readout_dim, c.target_vocab_size);
    if (has_enc_rec(c.variant)) {
        out.merge(reconstructor_shapes(c, ReconstructorRole::Encoder));
    }
    if (has_dec_rec(c.variant)) {
        out.merge(reconstructor_shapes(c, ReconstructorRole::Decoder));
    }
    return out;
}

ParameterSet init_parameters(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    return draw(parameter_shapes(cfg), cfg.init_range, rng);
}

void init_reconstructor(ParameterSet& params, const ModelConfig& cfg, ReconstructorRole role,
                        Rng& rng) {
    for (auto& [name, t] : draw(reconstructor_shapes(cfg, role), cfg.init_range, rng)) {
        params.set(name, std::move(t));
    }
}

void check_parameters(const ParameterSet& params, const ModelConfig& cfg) {
    std::vector<std::string> problems;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        if (!params.contains(name)) {
            problems.push_back(name + " (missing)");
        } else if (params.at(name).shape != shape) {
            problems.push_back(name + " (shape " + shape_str(params.at(name).shape) + ", want " +
                               shape_str(shape) + ")");
        }
    }
    if (!problems.empty()) {
        std::string msg = "parameters do not match variant " + to_string(cfg.variant) + ":";
        for (const auto& p : problems) msg += " " + p;
        throw ShapeError(msg);
    }
}

// ---------------------------------------------------------------- batches

PaddedBatch PaddedBatch::make(const std::vector<std::vector<int>>& seqs) {
    PaddedBatch b;
    b.batch = seqs.size();
    if (b.batch == 0) {
        throw DataError("empty batch");
    }
    for (const auto& s : seqs) {
        if (s.empty()) {
            throw DataError("empty sequence in batch");
        }
        b.steps = std::max(b.steps, s.size());
        b.lengths.push_back(s.size());
    }
    b.ids.assign(b.steps * b.batch, Vocabulary::kPad);
    b.mask.assign(b.steps * b.batch, 0.0);
    for (std::size_t i = 0; i < b.batch; ++i) {
        for (std::size_t t = 0; t < seqs[i].size(); ++t) {
            b.ids[t * b.batch + i] = seqs[i][t];
            b.mask[t * b.batch + i] = 1.0;
        }
    }
    return b;
}

std::vector<int> PaddedBatch::shifted_inputs() const {
    std::vector<int> prev(ids.size(), Vocabulary::kPad);
    for (std::size_t b = 0; b < batch; ++b) {
        prev[b] = Vocabulary::kBos;
    }
    for (std::size_t t = 1; t < steps; ++t) {
        for (std::size_t b = 0; b < batch; ++b) {
            prev[t * batch + b] = ids[(t - 1) * batch + b];
        }
    }
    return prev;
}

bool PaddedBatch::full_at(std::size_t t) const {
    for (std::size_t b = 0; b < batch; ++b) {
        if (mask[t * batch + b] == 0.0) return false;
    }
    return true;
}

std::vector<double> PaddedBatch::mask_batch_major() const {
    std::vector<double> out(batch * steps);
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t b = 0; b < batch; ++b) {
            out[b * steps + t] = mask[t * batch + b];
        }
    }
    return out;
}

// ---------------------------------------------------------------- network

Network::Network(Graph& graph, const ParameterSet& params, const ModelConfig& cfg)
    : graph_(graph), params_(params), cfg_(cfg) {}

Var Network::param(const std::string& name) { return graph_.param(name, params_.at(name)); }

Var Network::zeros(std::size_t rows, std::size_t cols) {
    return graph_.constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Network::Gru Network::gru(const std::string& prefix, std::size_t hidden) {
    return {param(prefix + "/W"), param(prefix + "/U"), param(prefix + "/b"), hidden};
}

// z = sigma(.), r = sigma(.), cand = tanh(x W_h + (r * h) U_h + b_h),
// h' = (1 - z) * h + z * cand, written as h + z * (cand - h).
Var gru_cell(Var input_proj, Var h, Var U, std::size_t H) {
    const Var gates = sigmoid(slice_cols(input_proj, 0, 2 * H) + matmul(h, slice_cols(U, 0, 2 * H)));
    const Var z = slice_cols(gates, 0, H);
    const Var r = slice_cols(gates, H, H);
    const Var cand = tanh(slice_cols(input_proj, 2 * H, H) + matmul(r * h, slice_cols(U, 2 * H, H)));
    return h + z * (cand - h);
}

Var mask_blend(Var updated, Var previous, std::span<const double> mask_col) {
    if (std::all_of(mask_col.begin(), mask_col.end(), [](double m) { return m == 1.0; })) {
        return updated;
    }
    Graph& g = *updated.graph();
    const Var m = g.constant(mask_col.size(), 1, std::vector<double>(mask_col.begin(), mask_col.end()));
    return previous + mul_col(updated - previous, m);
}

Var Network::gru_step(const Gru& g, Var input_proj, Var h) {
    return gru_cell(input_proj, h, g.U, g.hidden);
}

Var Network::blend(Var updated, Var previous, const PaddedBatch& seq, std::size_t t) {
    return mask_blend(updated, previous,
                      std::span<const double>(seq.mask).subspan(t * seq.batch, seq.batch));
}

EncoderOut Network::encode(const PaddedBatch& source) {
    const std::size_t B = source.batch;
    const std::size_t J = source.steps;
    const std::size_t H = cfg_.hidden_dim;
    if (B == 0 || J == 0) {
        throw DataError("encode: empty source");
    }
    const Var emb = lookup(param("emb/source"), source.ids);

    EncoderOut out;
    out.forward.resize(J);
    out.backward.resize(J);
    {
        const Gru g = gru("enc/fwd", H);
        const Var proj = matmul(emb, g.W) + g.b;
        Var h = zeros(B, H);
        for (std::size_t t = 0; t < J; ++t) {
            h = blend(gru_step(g, slice_rows(proj, t * B, B), h), h, source, t);
            out.forward[t] = h;
        }
    }
    {
        const Gru g = gru("enc/bwd", H);
        const Var proj = matmul(emb, g.W) + g.b;
        Var h = zeros(B, H);
        for (std::size_t t = J; t-- > 0;) {
            h = blend(gru_step(g, slice_rows(proj, t * B, B), h), h, source, t);
            out.backward[t] = h;
        }
    }
    std::vector<Var> states(J);
    for (std::size_t t = 0; t < J; ++t) {
        const Var parts[] = {out.forward[t], out.backward[t]};
        states[t] = concat_cols(parts);
    }
    out.memory = make_memory("dec", concat_rows(states), B, J, source.mask_batch_major());
    out.init_state = tanh(matmul(out.backward[0], param("dec/init/W")) + param("dec/init/b"));
    return out;
}

Memory Network::make_memory(const std::string& prefix, Var values, std::size_t batch,
                            std::size_t steps, std::vector<double> mask) {
    if (values.rows() != batch * steps || mask.size() != batch * steps) {
        throw ShapeError("memory: " + std::to_string(values.rows()) + " rows / " +
                         std::to_string(mask.size()) + " mask entries for batch " +
                         std::to_string(batch) + " x steps " + std::to_string(steps));
    }
    Memory m;
    m.values = values;
    m.keys = matmul(values, param(prefix + "/att/U")) + param(prefix + "/att/b");
    m.mask = std::move(mask);
    m.batch = batch;
    m.steps = steps;
    return m;
}

AttentionOut Network::attend(const std::string& prefix, Var query_state, const Memory& memory) {
    const Var q = matmul(query_state, param(prefix + "/att/W"));
    const Var energies = attention_energies(q, memory.keys, param(prefix + "/att/v"));
    AttentionOut out;
    out.weights = softmax(energies, memory.mask);
    out.context = attention_context(out.weights, memory.values);
    return out;
}

Var Network::readout(const std::string& prefix, Var emb_prev, Var states, Var contexts,
                     Rng* dropout) {
    Var t = tanh(matmul(emb_prev, param(prefix + "/out/Wy")) +
                 matmul(states, param(prefix + "/out/Ws")) +
                 matmul(contexts, param(prefix + "/out/Wc")) + param(prefix + "/out/b"));
    if (dropout != nullptr && cfg_.dropout_rate > 0.0) {
        const double keep = 1.0 - cfg_.dropout_rate;
        std::vector<double> mask(t.rows() * t.cols());
        for (double& m : mask) {
            m = dropout->uniform() < keep ? 1.0 / keep : 0.0;
        }
        t = t * graph_.constant(t.rows(), t.cols(), std::move(mask));
    }
    return matmul(t, param(prefix + "/out/Wo")) + param(prefix + "/out/bo");
}

DecoderOut Network::attentive_decode(const std::string& prefix, Var embedding,
                                     const Memory& memory, Var init_state,
                                     const PaddedBatch& target, std::size_t hidden,
                                     Rng* dropout) {
    const std::size_t B = target.batch;
    const std::size_t I = target.steps;
    const std::size_t E = cfg_.embedding_dim;
    if (memory.batch != B) {
        throw ShapeError(prefix + ": memory batch " + std::to_string(memory.batch) +
                         " vs target batch " + std::to_string(B));
    }
    const std::size_t mem_dim = memory.values.cols();

    const Var emb = lookup(embedding, target.shifted_inputs());
    const Gru g = gru(prefix + "/gru", hidden);
    const Var W_emb = slice_rows(g.W, 0, E);
    const Var W_ctx = slice_rows(g.W, E, mem_dim);
    const Var emb_proj = matmul(emb, W_emb) + g.b;

    DecoderOut out;
    out.steps = I;
    Var s = init_state;
    for (std::size_t i = 0; i < I; ++i) {
        const AttentionOut att = attend(prefix, s, memory);
        const Var proj = slice_rows(emb_proj, i * B, B) + matmul(att.context, W_ctx);
        s = blend(gru_step(g, proj, s), s, target, i);
        out.states.push_back(s);
        out.contexts.push_back(att.context);
        out.weights.push_back(att.weights);
    }
    out.stacked_states = concat_rows(out.states);
    const Var logits = readout(prefix, emb, out.stacked_states, concat_rows(out.contexts), dropout);
    const Var nll = nll_rows(logits, target.ids, target.mask);

    std::vector<double> selector(B * I * B, 0.0);
    for (std::size_t t = 0; t < I; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            selector[b * (I * B) + t * B + b] = 1.0;
        }
    }
    out.sentence_nll = matmul(graph_.constant(B, I * B, std::move(selector)), nll);
    out.loss = sum(nll);
    out.mask = target.mask_batch_major();
    return out;
}

DecoderOut Network::decode(const EncoderOut& enc, const PaddedBatch& target, Rng* dropout) {
    return attentive_decode("dec", param("emb/target"), enc.memory, enc.init_state, target,
                            cfg_.hidden_dim, dropout);
}

StepOut Network::decode_step(std::span<const int> prev_tokens, Var prev_state,
                             const Memory& memory) {
    const std::size_t E = cfg_.embedding_dim;
    const Var emb = lookup(param("emb/target"), prev_tokens);
    const Gru g = gru("dec/gru", cfg_.hidden_dim);
    const AttentionOut att = attend("dec", prev_state, memory);
    const Var proj = (matmul(emb, slice_rows(g.W, 0, E)) + g.b) +
                     matmul(att.context, slice_rows(g.W, E, memory.values.cols()));
    StepOut out;
    out.state = gru_step(g, proj, prev_state);
    out.context = att.context;
    out.weights = att.weights;
    out.logits = readout("dec", emb, out.state, att.context, nullptr);
    return out;
}

DecoderOut Network::reconstruct(ReconstructorRole role, const Memory& memory,
                                const PaddedBatch& target, Rng* dropout) {
    const std::string prefix = reconstructor_prefix(role);
    std::vector<double> mean(memory.batch * memory.steps, 0.0);
    for (std::size_t b = 0; b < memory.batch; ++b) {
        double len = 0.0;
        for (std::size_t t = 0; t < memory.steps; ++t) len += memory.mask[b * memory.steps + t];
        for (std::size_t t = 0; t < memory.steps; ++t) {
            mean[b * memory.steps + t] = memory.mask[b * memory.steps + t] / len;
        }
    }
    const Var pooled = attention_context(
        graph_.constant(memory.batch, memory.steps, std::move(mean)), memory.values);
    const Var init = tanh(matmul(pooled, param(prefix + "/init/W")) + param(prefix + "/init/b"));
    return attentive_decode(prefix, param("emb/source"), memory, init, target,
                            cfg_.reconstructor_hidden_dim, dropout);
}

LossTerms Network::joint_loss(const PaddedBatch& source, const PaddedBatch& target,
                              const PaddedBatch& labelled, Rng* dropout) {
    check_parameters(params_, cfg_);
    LossTerms out;
    out.encoder = encode(source);
    out.decoder = decode(out.encoder, target, dropout);
    out.likelihood = out.decoder.loss;
    out.total = out.likelihood;
    if (has_enc_rec(cfg_.variant)) {
        const Memory mem = make_memory("enc_rec", out.encoder.memory.values, source.batch,
                                       source.steps, out.encoder.memory.mask);
        out.enc_rec = reconstruct(ReconstructorRole::Encoder, mem, labelled, dropout).loss;
        out.total = out.total + *out.enc_rec;
    }
    if (has_dec_rec(cfg_.variant)) {
        const Memory mem = make_memory("dec_rec", out.decoder.stacked_states, target.batch,
                                       target.steps, out.decoder.mask);
        out.dec_rec = reconstruct(ReconstructorRole::Decoder, mem, labelled, dropout).loss;
        out.total = out.total + *out.dec_rec;
    }
    return out;
}

Memory Network::tile(const Memory& memory, std::size_t rows) {
    if (memory.batch != 1) {
        throw ShapeError("tile: expects a batch-1 memory");
    }
    std::vector<std::size_t> index;
    index.reserve(memory.steps * rows);
    for (std::size_t t = 0; t < memory.steps; ++t) {
        for (std::size_t b = 0; b < rows; ++b) index.push_back(t);
    }
    Memory out;
    out.values = gather_rows(memory.values, index);
    out.keys = gather_rows(memory.keys, index);
    out.batch = rows;
    out.steps = memory.steps;
    out.mask.reserve(rows * memory.steps);
    for (std::size_t b = 0; b < rows; ++b) {
        out.mask.insert(out.mask.end(), memory.mask.begin(), memory.mask.end());
    }
    return out;
}

}  // namespace dpnmt
