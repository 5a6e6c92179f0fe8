#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpnmt/params.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

// ------------------------------------------------------------------ alignment

struct AlignmentLink {
    std::size_t source = 0;
    std::size_t target = 0;
    auto operator<=>(const AlignmentLink&) const = default;
};

using Alignment = std::vector<AlignmentLink>;

// Pharaoh format: space-separated "i-j" (source-target, zero-based).
std::string format_pharaoh(const Alignment& links);
Alignment parse_pharaoh(const std::string& line);
// Throws DataError when a link is outside the sentence pair.
void check_alignment(const Alignment& links, std::size_t source_len, std::size_t target_len);

// Translation table t(e | f): outer key the conditioning token f (including
// kNullToken), inner key the generated token e.
using TranslationTable = std::map<std::string, std::map<std::string, double>>;
inline const std::string kNullToken = "NULL";

struct AlignResult {
    std::vector<Alignment> links;   // intersection of both directions, per pair
    TranslationTable target_given_source;
    TranslationTable source_given_target;
};

// IBM Model 1 with NULL, trained in both directions for `iterations` EM
// rounds. on_iteration(direction, iteration, table) sees every table after
// its M-step ("s2t" / "t2s").
AlignResult em_align(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                     std::size_t iterations,
                     const std::function<void(const std::string&, std::size_t,
                                              const TranslationTable&)>& on_iteration = {});

// ------------------------------------------------------------------ pronouns

// Lower-cases ASCII letters; other bytes pass through.
std::string fold_case(const std::string& s);

struct PronounInventory {
    std::vector<std::string> source;
    std::vector<std::string> target;  // compared case-folded

    bool is_source(const std::string& tok) const;
    bool is_target(const std::string& tok) const;

    // Lines "source = tok tok ..." and "target = tok tok ..."; '#' comments.
    static PronounInventory load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// target pronoun -> source pronouns ranked by probability.
class PronounLexicon {
  public:
    struct Entry {
        std::string source;
        double prob;
    };

    void add(const std::string& target, const std::string& source, double prob);
    bool contains(const std::string& target) const;
    // Highest-probability source pronoun; the target is case-folded.
    const std::string& top(const std::string& target) const;
    const std::vector<Entry>& entries(const std::string& target) const;
    std::size_t size() const { return table_.size(); }

    // From t(source | target): for every target pronoun, the source pronouns
    // it translates to, renormalized over the source inventory.
    static PronounLexicon from_table(const TranslationTable& source_given_target,
                                     const PronounInventory& inventory);
    // Lines "target<TAB>source<TAB>prob".
    static PronounLexicon load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

  private:
    std::map<std::string, std::vector<Entry>> table_;
};

// ------------------------------------------------------------------ labelled sentences

struct Insertion {
    std::size_t position = 0;  // gap index in x: 0 = before the first token
    std::string token;
    long target_index = -1;  // target token the insertion came from, -1 if none
};

struct LabeledSentence {
    Sentence tokens;  // x-hat
    std::vector<Insertion> insertions;

    // x-hat with the inserted tokens removed.
    Sentence strip() const;
};

// Inserts tokens into x; insertions at the same gap keep their order.
LabeledSentence apply_insertions(const Sentence& x, std::vector<Insertion> insertions);

// Projects unaligned target pronouns into the source. Missing lexicon
// entries are skipped and reported through `warnings` when given.
LabeledSentence label_parallel(const Sentence& x, const Sentence& y, const Alignment& links,
                               const PronounInventory& inventory, const PronounLexicon& lexicon,
                               std::vector<std::string>* warnings = nullptr);

struct LabellingScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t correct = 0;
    std::size_t predicted = 0;
    std::size_t gold = 0;
};

// An insertion is correct when a gold insertion has the same position and
// token (multiset matching). Empty prediction or gold sets score 0.
LabellingScore labelling_f1(const std::vector<LabeledSentence>& predicted,
                            const std::vector<LabeledSentence>& gold);

// Sidecar log: "sentence<TAB>position<TAB>token" per insertion, followed by
// "<TAB>target_index" when the insertion has one.
void write_insertion_log(const std::filesystem::path& path,
                         const std::vector<LabeledSentence>& corpus);
std::vector<std::vector<Insertion>> read_insertion_log(const std::filesystem::path& path,
                                                       std::size_t sentences);

// ------------------------------------------------------------------ DP generator

struct DpGeneratorConfig {
    std::size_t embedding_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t feature_dim = 32;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    std::size_t vocab_cap = 30000;
    double init_range = 0.1;
    std::uint64_t seed = 1;

    std::map<std::string, std::string> to_kv() const;
    static DpGeneratorConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Bidirectional GRU tagger over the gaps of "<s> x </s>": gap g sits between
// token g and g + 1 of that sequence and is classified from [h_g ; h_{g+1}]
// into NONE or one of the source pronouns.
struct DpGeneratorModel {
    DpGeneratorConfig config;
    Vocabulary vocab;
    std::vector<std::string> labels;  // labels[0] == "NONE"
    ParameterSet params;

    // Untrained model with the given label inventory.
    static DpGeneratorModel create(Vocabulary vocab, const std::vector<std::string>& pronouns,
                                   const DpGeneratorConfig& cfg);

    // Per-gap distributions over labels, |x| + 1 rows.
    std::vector<std::vector<double>> gap_distributions(const Sentence& x) const;

    void save(const std::filesystem::path& dir) const;
    static DpGeneratorModel load(const std::filesystem::path& dir);
};

DpGeneratorModel train_dp_generator(const std::vector<LabeledSentence>& corpus,
                                    const std::vector<std::string>& source_pronouns,
                                    const DpGeneratorConfig& cfg);

// Inserts the most probable pronoun at every gap where it beats both NONE and
// the threshold, except gaps next to a source pronoun already present.
LabeledSentence label_monolingual(const Sentence& x, const DpGeneratorModel& model,
                                  double threshold);

// Fraction of gaps whose argmax label matches the gold labelling.
double gap_accuracy(const DpGeneratorModel& model, const std::vector<LabeledSentence>& corpus);

}  // namespace dpnmt
