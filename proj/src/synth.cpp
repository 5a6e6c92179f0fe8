#include <algorithm>
#include <set>

#include "dpnmt/corpus_eval.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"

namespace dpnmt {

namespace {

bool is_pronoun_slot(char c) { return c == 'P' || c == 'O'; }

}  // namespace

SynthGrammar SynthGrammar::standard(double drop_rate, std::uint64_t seed) {
    SynthGrammar g;
    g.drop_rate = drop_rate;
    g.seed = seed;
    g.pronouns = {{"我", "i"}, {"你", "you"}, {"他", "he"}, {"她", "she"}, {"它", "it"}, {"我们", "we"}};
    g.words['C'] = {{"家", "home"},     {"请", "please"}, {"哥哥", "brother"},
                    {"姐姐", "sister"}, {"狗", "dog"},    {"一起", "together"}};
    g.words['N'] = {{"饭", "rice"}, {"书", "book"}, {"车", "car"},  {"茶", "tea"},  {"门", "door"},
                    {"花", "flower"}, {"鱼", "fish"}, {"水", "water"}, {"马", "horse"}, {"鸟", "bird"},
                    {"笔", "pen"},  {"杯子", "cup"}, {"船", "boat"}, {"灯", "lamp"}};
    g.words['V'] = {{"吃", "eat"},  {"看", "see"},  {"买", "buy"},  {"喝", "drink"}, {"开", "open"},
                    {"要", "want"}, {"找", "find"}, {"拿", "take"}, {"洗", "wash"},  {"爱", "love"},
                    {"带", "bring"}, {"送", "send"}};
    g.words['A'] = {{"好", "good"}, {"大", "big"}, {"小", "small"}, {"新", "new"},
                    {"旧", "old"},  {"红", "red"}, {"快", "fast"},  {"贵", "expensive"}};
    g.words['D'] = {{"也", "also"}, {"都", "all"}, {"常", "often"}, {"再", "again"}, {"总", "always"}, {"刚", "just"}};
    g.words['F'] = {{"跟", "with"}, {"到", "to"}, {"从", "from"}, {"给", "for"}};
    // Target orders move adverbs and adjectives but keep every pronoun right
    // after its source predecessor, so projection from gold links is exact.
    g.templates = {
        {"P V N", {0, 1, 2}},
        {"C P V N", {0, 1, 2, 3}},
        {"P D V N C", {0, 2, 1, 3, 4}},
        {"C P V O", {0, 1, 2, 3}},
        {"C P D V O", {0, 1, 2, 3, 4}},
        {"P V A N C", {0, 1, 3, 2, 4}},
        {"C P F O V N", {0, 1, 2, 3, 4, 5}},
        {"C P F N V N", {0, 1, 4, 5, 2, 3}},
        {"P D D V N", {0, 1, 3, 2, 4}},
        {"C P V N F O", {0, 1, 2, 3, 4, 5}},
        {"C P V A N", {0, 1, 2, 4, 3}},
        {"P V N C", {0, 1, 2, 3}},
        {"C P D V O F N", {0, 1, 2, 3, 4, 5, 6}},
        {"C P D V N F O", {0, 1, 2, 3, 4, 5, 6}},
        {"C P D V A N F O V N", {0, 1, 2, 3, 5, 4, 6, 7, 8, 9}},
        {"P F N V A N D V O C", {0, 1, 2, 3, 5, 4, 6, 7, 8, 9}},
        {"C P V N F O D V A N", {0, 1, 2, 3, 4, 5, 7, 6, 9, 8}},
        {"C P D V A N F N F O V N", {0, 1, 2, 3, 5, 4, 6, 7, 8, 9, 10, 11}},
        {"P D V N F O D V A N C", {0, 1, 2, 3, 4, 5, 7, 6, 9, 8, 10}},
        {"C P V O D V N", {0, 1, 2, 3, 5, 4, 6}},
    };
    for (auto& t : g.templates) t.slots.erase(std::remove(t.slots.begin(), t.slots.end(), ' '), t.slots.end());
    return g;
}

void SynthGrammar::validate() const {
    if (!(drop_rate >= 0.0 && drop_rate <= 1.0)) {
        throw DataError("drop_rate must be in [0, 1], got " + std::to_string(drop_rate));
    }
    if (templates.empty()) {
        throw DataError("synthetic grammar has no templates");
    }
    if (pronouns.empty()) {
        throw DataError("synthetic grammar has no pronouns");
    }
    std::set<std::string> src, tgt;
    auto add = [&](const std::pair<std::string, std::string>& p) {
        if (!src.insert(p.first).second || !tgt.insert(p.second).second) {
            throw DataError("dictionary is not injective at " + p.first + " / " + p.second);
        }
    };
    for (const auto& [kind, list] : words) {
        for (const auto& p : list) add(p);
    }
    for (const auto& p : pronouns) add(p);
    if (tgt.count(determiner)) {
        throw DataError("determiner '" + determiner + "' clashes with a dictionary word");
    }
    const bool has_cues = words.count('C') && words.at('C').size() == pronouns.size();
    for (const auto& t : templates) {
        const std::string where = "template '" + t.slots + "'";
        std::vector<std::size_t> sorted = t.target_order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != i) throw DataError(where + ": target order is not a permutation");
        }
        if (sorted.size() != t.slots.size()) {
            throw DataError(where + ": target order is not a permutation");
        }
        for (std::size_t k = 0; k < t.slots.size(); ++k) {
            const char c = t.slots[k];
            if (is_pronoun_slot(c)) continue;
            if (c == 'C' && !has_cues) throw DataError(where + ": cue slot needs one cue word per pronoun");
            if (!words.count(c) || words.at(c).empty()) {
                throw DataError(where + ": no words for slot kind '" + std::string(1, c) + "'");
            }
        }
        // A dropped pronoun is projected after the source of the closest
        // preceding target token, which must be its own source predecessor.
        for (std::size_t r = 0; r < t.target_order.size(); ++r) {
            const std::size_t k = t.target_order[r];
            if (!is_pronoun_slot(t.slots[k])) continue;
            const bool ok = r == 0 ? k == 0
                                   : t.target_order[r - 1] + 1 == k && !is_pronoun_slot(t.slots[k - 1]);
            if (!ok) throw DataError(where + ": pronoun slot " + std::to_string(k) + " is not projectable");
        }
    }
}

PronounInventory SynthGrammar::inventory() const {
    PronounInventory inv;
    for (const auto& [s, t] : pronouns) {
        inv.source.push_back(s);
        inv.target.push_back(t);
    }
    return inv;
}

std::vector<SynthPair> synth_corpus(const SynthGrammar& grammar, std::size_t n) {
    grammar.validate();
    if (n == 0) {
        throw DataError("synth_corpus: n must be >= 1");
    }
    Rng rng(grammar.seed);
    std::vector<SynthPair> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const SynthTemplate& t = rng.pick(grammar.templates);
        const std::size_t subject = rng.below(grammar.pronouns.size());
        std::vector<std::pair<std::string, std::string>> realized;
        for (char c : t.slots) {
            if (c == 'P') {
                realized.push_back(grammar.pronouns[subject]);
            } else if (c == 'O') {
                realized.push_back(grammar.pronouns[(subject + grammar.object_shift) % grammar.pronouns.size()]);
            } else if (c == 'C') {
                realized.push_back(grammar.words.at('C')[subject]);
            } else {
                realized.push_back(rng.pick(grammar.words.at(c)));
            }
        }
        std::vector<bool> dropped(t.slots.size(), false);
        for (std::size_t k = 0; k < t.slots.size(); ++k) {
            if (is_pronoun_slot(t.slots[k])) dropped[k] = rng.bernoulli(grammar.drop_rate);
        }

        SynthPair p;
        std::vector<long> x_index(t.slots.size(), -1);
        for (std::size_t k = 0; k < t.slots.size(); ++k) {
            p.labelled.push_back(realized[k].first);
            if (!dropped[k]) {
                x_index[k] = static_cast<long>(p.source.size());
                p.source.push_back(realized[k].first);
            }
        }
        std::vector<long> y_index(t.slots.size(), -1);
        for (std::size_t k : t.target_order) {
            if (t.slots[k] == 'N') p.target.push_back(grammar.determiner);
            y_index[k] = static_cast<long>(p.target.size());
            p.target.push_back(realized[k].second);
        }
        for (std::size_t k = 0; k < t.slots.size(); ++k) {
            if (dropped[k]) {
                // Gap in x: the number of kept tokens before slot k.
                std::size_t gap = 0;
                for (std::size_t j = 0; j < k; ++j) gap += !dropped[j];
                p.drops.push_back({gap, realized[k].first, y_index[k]});
            } else {
                p.alignment.push_back({static_cast<std::size_t>(x_index[k]), static_cast<std::size_t>(y_index[k])});
            }
        }
        std::sort(p.alignment.begin(), p.alignment.end());
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace dpnmt
