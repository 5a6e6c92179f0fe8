#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dpnmt/model.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

struct Hypothesis {
    std::vector<int> tokens;  // ends with </s> once finished
    double log_likelihood = 0.0;
    std::vector<double> state;  // decoder state after the last token
    bool finished = false;

    // Length-normalized log-likelihood, the ranking score everywhere.
    double score() const;
};

// Up to beam_size finished hypotheses, best first. max_len counts </s>:
// a hypothesis that reaches max_len tokens has </s> forced as its last token.
std::vector<Hypothesis> beam_search(const ParameterSet& params, const ModelConfig& cfg,
                                    std::span<const int> x, std::size_t beam_size,
                                    std::size_t max_len);

// Default output length limit for a source sentence (tokens including </s>).
std::size_t default_max_len(std::size_t source_len);

// Beam search over a corpus; output order matches input order for any
// worker count.
std::vector<std::vector<Hypothesis>> translate_corpus(const ParameterSet& params,
                                                      const ModelConfig& cfg,
                                                      const std::vector<std::vector<int>>& sources,
                                                      std::size_t beam_size, std::size_t workers);

struct RerankWeights {
    double lambda_enc = 1.0;
    double lambda_dec = 1.0;
    void validate() const;
};

struct ScoredCandidate {
    Hypothesis hyp;
    // Raw (unnormalized) reconstruction log scores, when the model has them.
    std::optional<double> enc_rec;
    std::optional<double> dec_rec;
    double overall = 0.0;
};

struct RerankResult {
    std::vector<ScoredCandidate> table;  // deduplicated, in input order
    std::vector<std::size_t> order;      // indices into table, best first
    const ScoredCandidate& best() const { return table.at(order.at(0)); }
};

// overall_i = ll_i + lambda_enc * enc_i + lambda_dec * dec_i on already
// normalized scores; a missing span counts as zeros. Returns indices sorted by
// descending overall score (stable).
std::vector<std::size_t> combine_scores(std::span<const double> likelihood,
                                        std::span<const double> enc, std::span<const double> dec,
                                        const RerankWeights& w, std::vector<double>* overall = nullptr);

// Scores k-best candidates with reconstruction of x_hat (likelihood / |y|,
// reconstruction / |x_hat|) and sorts them. Reconstructors present in the
// parameters are always scored; a nonzero weight for an absent one throws.
RerankResult rerank(const std::vector<Hypothesis>& kbest, std::span<const int> x,
                    std::span<const int> x_hat, const ParameterSet& params,
                    const ModelConfig& cfg, const RerankWeights& weights);

// One line per candidate: sentence, rank, log-likelihood, enc-rec, dec-rec
// ("-" when absent), tokens. Tab-separated.
void write_kbest(std::ostream& out, std::size_t sentence, const RerankResult& r,
                 const Vocabulary& target_vocab);

}  // namespace dpnmt
