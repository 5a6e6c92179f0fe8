#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpnmt/model.hpp"
#include "dpnmt/seq2seq.hpp"

namespace dpnmt {

struct TrainConfig {
    std::size_t batch_size = 80;
    std::size_t epochs_stage1 = 20;
    std::size_t epochs_stage2 = 15;
    double adadelta_rho = 0.95;
    double adadelta_eps = 1e-6;
    // Global gradient norm cap; 0 disables clipping.
    double clip_norm = 1.0;
    std::uint64_t shuffle_seed = 1;
    // Sentences with more source or target words (excluding </s>) are dropped.
    std::size_t max_length = 20;
    // "loglik" (tuning-set mean per-token log-likelihood) or "bleu"
    // (requires TrainHooks::tune_bleu).
    std::string select_metric = "loglik";
    std::size_t workers = 1;
    // Testing aid: forces all gradients to zero.
    bool zero_gradients = false;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Running averages E[g^2] and E[dx^2] per parameter.
struct OptimizerState {
    std::map<std::string, Tensor> mean_sq_grad;
    std::map<std::string, Tensor> mean_sq_delta;
};

using Gradients = std::map<std::string, Tensor>;

void adadelta_update(ParameterSet& params, const Gradients& grads, OptimizerState& state,
                     double rho, double eps);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t batches = 0;
    std::size_t sentences = 0;
    // Corpus sums of the negative log terms ("likelihood", "enc_rec", "dec_rec")
    // accumulated over the epoch's batches; for epoch 0 they are evaluated on
    // the initial parameters without updating.
    std::map<std::string, double> loss_sums;
    double tune_metric = 0.0;
    double seconds = 0.0;

    std::string format() const;
};

struct TrainResult {
    ParameterSet best;
    ParameterSet last;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
    std::vector<EpochRecord> log;
};

struct TrainHooks {
    // Tuning BLEU of a parameter set, used when select_metric == "bleu".
    std::function<double(const ParameterSet&)> tune_bleu;
    // Called with each finished epoch record.
    std::function<void(const EpochRecord&)> on_epoch;
    // When set, per-epoch checkpoints epoch-N.ckpt, a "best" pointer file and
    // train.log are written here.
    std::optional<std::filesystem::path> out_dir;
};

// Runs `epochs` epochs of joint training from `init` and returns the
// parameters that scored best on the tuning set (epoch 0 = the initial
// parameters). An optimizer state is created fresh for every call.
TrainResult train(const std::vector<Triple>& corpus, const std::vector<Triple>& tune,
                  const ModelConfig& model, const TrainConfig& cfg, ParameterSet init,
                  std::size_t epochs, const TrainHooks& hooks = {});

// Sums of negative log terms over a corpus, no gradients.
std::map<std::string, double> corpus_loss(const std::vector<Triple>& corpus,
                                          const ModelConfig& model, const ParameterSet& params,
                                          std::size_t batch_size = 32);

// Mean per-token log-likelihood of the targets (</s> included).
double mean_token_loglik(const std::vector<Triple>& corpus, const ModelConfig& model,
                         const ParameterSet& params, std::size_t batch_size = 32);

// Copies every encoder-decoder tensor from a baseline and draws fresh
// reconstructor parameters for the variant from `seed`.
ParameterSet init_from_baseline(const ParameterSet& baseline, const ModelConfig& model,
                                std::uint64_t seed);

// Length-bucketed minibatches: indices sorted by length inside a shuffled
// order, cut into batches, and the batch order shuffled.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<Triple>& corpus,
                                                   std::size_t batch_size, Rng& rng);

}  // namespace dpnmt
