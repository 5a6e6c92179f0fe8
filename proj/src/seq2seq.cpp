#include "dpnmt/seq2seq.hpp"

#include "dpnmt/error.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

namespace {

std::vector<double> row(Var v, std::size_t r) {
    const auto data = v.value();
    const std::size_t c = v.cols();
    return {data.begin() + static_cast<std::ptrdiff_t>(r * c),
            data.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

PaddedBatch single(std::span<const int> seq) {
    return PaddedBatch::make({std::vector<int>(seq.begin(), seq.end())});
}

Var stack_constant(Graph& g, const Vectors& v) {
    if (v.empty()) {
        throw DataError("empty representation sequence");
    }
    const std::size_t dim = v.front().size();
    std::vector<double> flat;
    flat.reserve(v.size() * dim);
    for (const auto& x : v) {
        if (x.size() != dim) throw ShapeError("representation vectors differ in size");
        flat.insert(flat.end(), x.begin(), x.end());
    }
    return g.constant(v.size(), dim, std::move(flat));
}

Memory encoder_memory(Network& net, const EncoderStates& enc) {
    Graph& g = net.graph();
    return net.make_memory("dec", stack_constant(g, enc.h), 1, enc.length(),
                           std::vector<double>(enc.length(), 1.0));
}

}  // namespace

void check_ends_with_eos(std::span<const int> seq, const char* what) {
    if (seq.empty() || seq.back() != Vocabulary::kEos) {
        throw DataError(std::string(what) + " must be non-empty and end with </s>");
    }
}

EncoderStates encode(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> x) {
    if (x.empty()) {
        throw DataError("encode: empty source sentence");
    }
    Graph g(false);
    Network net(g, params, cfg);
    const EncoderOut out = net.encode(single(x));
    EncoderStates enc;
    for (std::size_t j = 0; j < x.size(); ++j) {
        enc.h.push_back(row(out.memory.values, j));
    }
    enc.init_state = row(out.init_state, 0);
    return enc;
}

Attention attend(const ParameterSet& params, const ModelConfig& cfg,
                 std::span<const double> prev_state, const EncoderStates& enc) {
    Graph g(false);
    Network net(g, params, cfg);
    const Memory mem = encoder_memory(net, enc);
    const Var s = g.constant(1, prev_state.size(),
                             std::vector<double>(prev_state.begin(), prev_state.end()));
    const AttentionOut att = net.attend("dec", s, mem);
    return {row(att.weights, 0), row(att.context, 0)};
}

StepResult decode_step(const ParameterSet& params, const ModelConfig& cfg, int prev_token,
                       std::span<const double> prev_state, const EncoderStates& enc) {
    Graph g(false);
    Network net(g, params, cfg);
    const Memory mem = encoder_memory(net, enc);
    const Var s = g.constant(1, prev_state.size(),
                             std::vector<double>(prev_state.begin(), prev_state.end()));
    const int tokens[] = {prev_token};
    const StepOut step = net.decode_step(tokens, s, mem);
    const std::vector<double> mask(step.logits.cols(), 1.0);
    return {row(step.state, 0), row(softmax(step.logits, mask), 0), row(step.weights, 0)};
}

DecoderTrace decoder_trace(const ParameterSet& params, const ModelConfig& cfg,
                           std::span<const int> x, std::span<const int> y) {
    check_ends_with_eos(y, "target sentence");
    Graph g(false);
    Network net(g, params, cfg);
    const EncoderOut enc = net.encode(single(x));
    const DecoderOut dec = net.decode(enc, single(y));
    DecoderTrace trace;
    for (std::size_t i = 0; i < dec.steps; ++i) {
        trace.states.push_back(row(dec.states[i], 0));
        trace.contexts.push_back(row(dec.contexts[i], 0));
        trace.weights.push_back(row(dec.weights[i], 0));
    }
    trace.log_likelihood = -dec.loss.scalar();
    return trace;
}

double log_likelihood(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> x,
                      std::span<const int> y) {
    return decoder_trace(params, cfg, x, y).log_likelihood;
}

double reconstruct_log_score(const ParameterSet& params, const ModelConfig& cfg,
                             ReconstructorRole role, const Vectors& v,
                             std::span<const int> x_hat) {
    check_ends_with_eos(x_hat, "labelled sentence");
    Graph g(false);
    Network net(g, params, cfg);
    const Memory mem = net.make_memory(reconstructor_prefix(role), stack_constant(g, v), 1,
                                       v.size(), std::vector<double>(v.size(), 1.0));
    return -net.reconstruct(role, mem, single(x_hat)).loss.scalar();
}

JointLoss joint_loss(const ParameterSet& params, const ModelConfig& cfg, const Triple& triple) {
    check_ends_with_eos(triple.target, "target sentence");
    check_ends_with_eos(triple.labelled, "labelled sentence");
    Graph g(false);
    Network net(g, params, cfg);
    const LossTerms terms =
        net.joint_loss(single(triple.source), single(triple.target), single(triple.labelled));
    JointLoss out;
    out.parts["likelihood"] = terms.likelihood.scalar();
    out.total = out.parts["likelihood"];
    if (terms.enc_rec) {
        out.parts["enc_rec"] = terms.enc_rec->scalar();
        out.total += out.parts["enc_rec"];
    }
    if (terms.dec_rec) {
        out.parts["dec_rec"] = terms.dec_rec->scalar();
        out.total += out.parts["dec_rec"];
    }
    return out;
}

}  // namespace dpnmt
