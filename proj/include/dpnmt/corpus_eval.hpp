#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

// ------------------------------------------------------------------ synthetic language

// A template is a source slot string and the order in which the slots are
// realized on the target side. Slot kinds:
//   P subject pronoun, O object pronoun (fixed by the subject), C cue word
//   agreeing with the subject,
//   N noun (target gets "the" in front), V verb, A adjective, D adverb,
//   F function word.
struct SynthTemplate {
    std::string slots;
    std::vector<std::size_t> target_order;
};

struct SynthGrammar {
    // Word categories keyed by slot kind; each entry is (source, target).
    std::map<char, std::vector<std::pair<std::string, std::string>>> words;
    // pronouns[k] is realized with cue word words['C'][k].
    std::vector<std::pair<std::string, std::string>> pronouns;
    // An object pronoun is pronouns[(subject + object_shift) % pronouns.size()],
    // so every dropped pronoun in a cued sentence is recoverable from the source.
    std::size_t object_shift = 3;
    std::vector<SynthTemplate> templates;
    std::string determiner = "the";
    double drop_rate = 0.3;
    std::uint64_t seed = 1;

    // 50-word dictionary, 6 pronoun pairs, 20 templates of length 3 to 12.
    static SynthGrammar standard(double drop_rate = 0.3, std::uint64_t seed = 1);

    // Throws DataError on a non-injective dictionary, a drop rate outside
    // [0, 1], or a malformed template.
    void validate() const;
    PronounInventory inventory() const;
};

struct SynthPair {
    Sentence source;     // x, pronouns dropped
    Sentence target;     // y
    Sentence labelled;   // gold x-hat
    Alignment alignment; // gold links between x and y
    std::vector<Insertion> drops;  // gold insertions into x, with target_index
};

// n pairs drawn from the grammar with its seed; every pronoun slot is dropped
// independently with probability drop_rate.
std::vector<SynthPair> synth_corpus(const SynthGrammar& grammar, std::size_t n);

// ------------------------------------------------------------------ corpus files

std::vector<Sentence> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Sentence>& lines);
std::vector<Alignment> read_alignments(const std::filesystem::path& path);
void write_alignments(const std::filesystem::path& path, const std::vector<Alignment>& lines);
// One line per sentence: space-joined tokens.
std::string join(const Sentence& s);

// ------------------------------------------------------------------ statistics

struct SideStats {
    std::size_t sentences = 0;
    std::size_t words = 0;
    std::size_t pronouns = 0;
    std::size_t vocabulary = 0;
    double average_length = 0.0;
};

struct CorpusStats {
    SideStats source;
    SideStats target;
    std::size_t inserted = 0;
    double dp_rate = 0.0;
    bool no_target_pronouns = false;

    std::string table() const;
    // key=value records, one per line.
    std::string records() const;
};

// dp_rate = inserted pronouns / target-side pronouns (0 with a flag when the
// target side has none).
CorpusStats dp_rate_stats(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                          const std::vector<std::vector<Insertion>>& insertions,
                          const PronounInventory& inventory);

// ------------------------------------------------------------------ metrics

struct BleuResult {
    double score = 0.0;  // 0..100
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
    double brevity_penalty = 0.0;

    std::string format() const;
};

// Corpus-level BLEU-4, case-insensitive, unsmoothed, single reference.
BleuResult bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references);

// Sentence BLEU-4 with add-one smoothing of the 2- to 4-gram precisions.
double sentence_bleu(const Sentence& candidate, const Sentence& reference);

struct SignTestResult {
    std::size_t wins = 0;    // A better
    std::size_t losses = 0;  // B better
    std::size_t ties = 0;
    double p_value = 1.0;
    bool all_ties = false;
};

// Two-sided exact binomial test over the non-tied sentences.
SignTestResult sign_test(const std::vector<Sentence>& a, const std::vector<Sentence>& b,
                         const std::vector<Sentence>& references);
double binomial_two_sided(std::size_t wins, std::size_t losses);

struct DpRecall {
    std::size_t matched = 0;
    std::size_t dropped = 0;
    double recall() const { return dropped ? static_cast<double>(matched) / static_cast<double>(dropped) : 0.0; }
};

// Recall of target pronouns whose source pronoun was dropped. For each
// sentence and pronoun p with d dropped and k overt reference occurrences,
// a hypothesis with h occurrences recovers min(max(0, h - k), d) of them.
DpRecall dp_token_recall(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                         const std::vector<std::vector<Insertion>>& drops);

}  // namespace dpnmt
