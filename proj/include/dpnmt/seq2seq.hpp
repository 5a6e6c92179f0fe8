#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpnmt/model.hpp"

namespace dpnmt {

// One training instance as ids: source x, target y and DP-labelled source
// x-hat. target and labelled end with </s>.
struct Triple {
    std::vector<int> source;
    std::vector<int> target;
    std::vector<int> labelled;
};

using Vectors = std::vector<std::vector<double>>;

struct EncoderStates {
    // h[j] = forward state ++ backward state, size 2 * hidden_dim.
    Vectors h;
    std::vector<double> init_state;
    std::size_t length() const { return h.size(); }
};

struct Attention {
    std::vector<double> weights;
    std::vector<double> context;
};

struct StepResult {
    std::vector<double> state;
    std::vector<double> distribution;
    std::vector<double> weights;
};

struct DecoderTrace {
    Vectors states;
    Vectors contexts;
    Vectors weights;
    double log_likelihood = 0.0;
};

struct JointLoss {
    double total = 0.0;
    // "likelihood", "enc_rec", "dec_rec": negative log scores of present terms.
    std::map<std::string, double> parts;
};

// Single-sentence evaluation helpers (no gradients, dropout disabled).
EncoderStates encode(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> x);
Attention attend(const ParameterSet& params, const ModelConfig& cfg,
                 std::span<const double> prev_state, const EncoderStates& enc);
StepResult decode_step(const ParameterSet& params, const ModelConfig& cfg, int prev_token,
                       std::span<const double> prev_state, const EncoderStates& enc);
double log_likelihood(const ParameterSet& params, const ModelConfig& cfg, std::span<const int> x,
                      std::span<const int> y);
DecoderTrace decoder_trace(const ParameterSet& params, const ModelConfig& cfg,
                           std::span<const int> x, std::span<const int> y);
// sum_j log R(x_hat_j | x_hat_<j, v) for representation vectors v.
double reconstruct_log_score(const ParameterSet& params, const ModelConfig& cfg,
                             ReconstructorRole role, const Vectors& v,
                             std::span<const int> x_hat);
JointLoss joint_loss(const ParameterSet& params, const ModelConfig& cfg, const Triple& triple);

void check_ends_with_eos(std::span<const int> seq, const char* what);

}  // namespace dpnmt
