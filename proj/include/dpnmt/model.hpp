#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpnmt/graph.hpp"
#include "dpnmt/params.hpp"

namespace dpnmt {

class Rng;

// Which reconstruction terms a model carries.
enum class Variant { Baseline, EncRec, DecRec, Both };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
bool has_enc_rec(Variant v);
bool has_dec_rec(Variant v);

enum class ReconstructorRole { Encoder, Decoder };

// Parameter namespace of a reconstructor: "enc_rec" or "dec_rec".
std::string reconstructor_prefix(ReconstructorRole role);

struct ModelConfig {
    std::size_t source_vocab_size = 0;
    std::size_t target_vocab_size = 0;
    std::size_t embedding_dim = 620;
    std::size_t hidden_dim = 1000;
    std::size_t readout_dim = 620;
    std::size_t reconstructor_hidden_dim = 1000;
    std::size_t max_train_length = 20;
    double dropout_rate = 0.0;
    double init_range = 0.08;
    Variant variant = Variant::Baseline;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Shapes of every parameter the configuration requires.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);
std::map<std::string, Shape> reconstructor_shapes(const ModelConfig& cfg, ReconstructorRole role);
// Encoder-decoder parameters (everything outside the reconstructor namespaces).
bool is_translation_param(const std::string& name);

// Uniform(-init_range, init_range) for every parameter of the variant.
ParameterSet init_parameters(const ModelConfig& cfg, Rng& rng);
void init_reconstructor(ParameterSet& params, const ModelConfig& cfg, ReconstructorRole role,
                        Rng& rng);
// Throws ShapeError listing missing or mis-shaped tensors.
void check_parameters(const ParameterSet& params, const ModelConfig& cfg);

// Right-padded id sequences stored time-major: index t * batch + b.
struct PaddedBatch {
    std::size_t batch = 0;
    std::size_t steps = 0;
    std::vector<int> ids;
    std::vector<double> mask;
    std::vector<std::size_t> lengths;

    static PaddedBatch make(const std::vector<std::vector<int>>& seqs);
    // Ids fed as previous tokens: <s> at t = 0, ids[t - 1] afterwards.
    std::vector<int> shifted_inputs() const;
    bool full_at(std::size_t t) const;
    // mask in batch-major [batch x steps] order.
    std::vector<double> mask_batch_major() const;
};

// Sequence of attention memory vectors, stacked time-major [steps * batch x dim].
struct Memory {
    Var values;
    Var keys;
    std::vector<double> mask;  // [batch x steps], batch-major
    std::size_t batch = 0;
    std::size_t steps = 0;
};

struct AttentionOut {
    Var weights;  // [batch x steps]
    Var context;  // [batch x dim]
};

struct EncoderOut {
    Memory memory;
    std::vector<Var> forward;
    std::vector<Var> backward;
    Var init_state;  // decoder s_0
};

// Teacher-forced pass of an attentive decoder (NMT decoder or reconstructor).
struct DecoderOut {
    std::vector<Var> states;    // per step, [batch x hidden]
    std::vector<Var> contexts;  // per step
    std::vector<Var> weights;   // per step attention rows
    Var stacked_states;         // [steps * batch x hidden]
    Var sentence_nll;           // [batch x 1], -log P per sentence
    Var loss;                   // scalar sum over the batch
    std::vector<double> mask;   // target mask, batch-major
    std::size_t steps = 0;
};

struct StepOut {
    Var state;
    Var context;
    Var weights;
    Var logits;
};

struct LossTerms {
    Var total;
    Var likelihood;  // -log P(y|x)
    std::optional<Var> enc_rec;
    std::optional<Var> dec_rec;
    DecoderOut decoder;
    EncoderOut encoder;
};

// One GRU step. input_proj = x W + b, shape [rows x 3H]; U is [H x 3H] with
// column blocks (update, reset, candidate).
Var gru_cell(Var input_proj, Var h, Var U, std::size_t hidden);

// Keeps `previous` in rows whose mask entry is 0, takes `updated` elsewhere.
// Returns `updated` untouched when the mask is all ones.
Var mask_blend(Var updated, Var previous, std::span<const double> mask_col);

// Builds the network on a graph. Parameters are bound lazily through
// Graph::param, so one Network can be used for several passes on a graph.
class Network {
  public:
    Network(Graph& graph, const ParameterSet& params, const ModelConfig& cfg);

    Graph& graph() { return graph_; }
    const ModelConfig& config() const { return cfg_; }
    Var param(const std::string& name);

    EncoderOut encode(const PaddedBatch& source);
    // Memory over arbitrary vectors, for the attention of `prefix`.
    Memory make_memory(const std::string& prefix, Var values, std::size_t batch, std::size_t steps,
                       std::vector<double> mask);
    AttentionOut attend(const std::string& prefix, Var query_state, const Memory& memory);

    DecoderOut decode(const EncoderOut& enc, const PaddedBatch& target, Rng* dropout = nullptr);
    StepOut decode_step(std::span<const int> prev_tokens, Var prev_state, const Memory& memory);

    DecoderOut reconstruct(ReconstructorRole role, const Memory& memory, const PaddedBatch& target,
                           Rng* dropout = nullptr);

    // Negative joint objective over a batch; absent terms per variant.
    LossTerms joint_loss(const PaddedBatch& source, const PaddedBatch& target,
                         const PaddedBatch& labelled, Rng* dropout = nullptr);

    // Replicates a batch-1 memory for `rows` hypotheses.
    Memory tile(const Memory& memory, std::size_t rows);

  private:
    struct Gru {
        Var W;
        Var U;
        Var b;
        std::size_t hidden;
    };
    Gru gru(const std::string& prefix, std::size_t hidden);
    Var gru_step(const Gru& g, Var input_proj, Var h);
    Var blend(Var updated, Var previous, const PaddedBatch& seq, std::size_t t);
    Var zeros(std::size_t rows, std::size_t cols);

    DecoderOut attentive_decode(const std::string& prefix, Var embedding, const Memory& memory,
                                Var init_state, const PaddedBatch& target, std::size_t hidden,
                                Rng* dropout);
    Var readout(const std::string& prefix, Var emb_proj, Var states, Var contexts, Rng* dropout);

    Graph& graph_;
    const ParameterSet& params_;
    ModelConfig cfg_;
};

}  // namespace dpnmt
