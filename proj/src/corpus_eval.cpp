#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dpnmt/corpus_eval.hpp"
#include "dpnmt/error.hpp"

namespace dpnmt {

std::string join(const Sentence& s) {
    std::string out;
    for (const auto& w : s) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::vector<Sentence> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read corpus " + path.string());
    }
    std::vector<Sentence> out;
    for (std::string line; std::getline(in, line);) {
        std::istringstream words(line);
        Sentence s;
        for (std::string w; words >> w;) s.push_back(w);
        out.push_back(std::move(s));
    }
    return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Sentence>& lines) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    for (const auto& s : lines) out << join(s) << '\n';
}

std::vector<Alignment> read_alignments(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read alignments " + path.string());
    }
    std::vector<Alignment> out;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        try {
            out.push_back(parse_pharaoh(line));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_alignments(const std::filesystem::path& path, const std::vector<Alignment>& lines) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    for (const auto& a : lines) out << format_pharaoh(a) << '\n';
}

namespace {

SideStats side_stats(const std::vector<Sentence>& corpus, const std::function<bool(const std::string&)>& is_pronoun) {
    SideStats s;
    std::set<std::string> types;
    s.sentences = corpus.size();
    for (const auto& line : corpus) {
        s.words += line.size();
        for (const auto& w : line) {
            types.insert(w);
            s.pronouns += is_pronoun(w);
        }
    }
    s.vocabulary = types.size();
    s.average_length = s.sentences ? static_cast<double>(s.words) / static_cast<double>(s.sentences) : 0.0;
    return s;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string CorpusStats::table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %10s %10s %10s %8s %8s\n", "side", "|S|", "|W|", "|P|", "|V|", "|L|");
    out << line;
    for (const auto& [name, s] : {std::pair{"source", source}, std::pair{"target", target}}) {
        std::snprintf(line, sizeof line, "%-8s %10zu %10zu %10zu %8zu %8.2f\n", name, s.sentences, s.words,
                      s.pronouns, s.vocabulary, s.average_length);
        out << line;
    }
    out << "dropped pronouns " << inserted << " of " << target.pronouns << " target pronouns, DP rate "
        << fixed(100.0 * dp_rate, 2) << "%" << (no_target_pronouns ? " (no target pronouns)" : "") << '\n';
    return out.str();
}

std::string CorpusStats::records() const {
    std::ostringstream out;
    for (const auto& [name, s] : {std::pair{"source", source}, std::pair{"target", target}}) {
        out << name << ".sentences=" << s.sentences << '\n'
            << name << ".words=" << s.words << '\n'
            << name << ".pronouns=" << s.pronouns << '\n'
            << name << ".vocabulary=" << s.vocabulary << '\n'
            << name << ".average_length=" << fixed(s.average_length, 4) << '\n';
    }
    out << "inserted=" << inserted << '\n'
        << "dp_rate=" << fixed(dp_rate, 6) << '\n'
        << "no_target_pronouns=" << (no_target_pronouns ? 1 : 0) << '\n';
    return out.str();
}

CorpusStats dp_rate_stats(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                          const std::vector<std::vector<Insertion>>& insertions,
                          const PronounInventory& inventory) {
    if (sources.size() != targets.size() || sources.size() != insertions.size()) {
        throw DataError("dp_rate_stats: sources, targets and insertion logs differ in length");
    }
    CorpusStats st;
    st.source = side_stats(sources, [&](const std::string& w) { return inventory.is_source(w); });
    st.target = side_stats(targets, [&](const std::string& w) { return inventory.is_target(w); });
    for (const auto& ins : insertions) st.inserted += ins.size();
    st.no_target_pronouns = st.target.pronouns == 0;
    st.dp_rate = st.no_target_pronouns ? 0.0
                                       : static_cast<double>(st.inserted) / static_cast<double>(st.target.pronouns);
    return st;
}

// ------------------------------------------------------------------ BLEU

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
    NgramCounts out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Sentence(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

Sentence folded(const Sentence& s) {
    Sentence out;
    for (const auto& w : s) out.push_back(fold_case(w));
    return out;
}

// Clipped matches and candidate n-gram totals for n = 1..4.
void count(const Sentence& cand, const Sentence& ref, std::array<std::size_t, 4>& matches,
           std::array<std::size_t, 4>& totals) {
    const Sentence c = folded(cand), r = folded(ref);
    for (std::size_t n = 1; n <= 4; ++n) {
        const NgramCounts cn = ngrams(c, n), rn = ngrams(r, n);
        for (const auto& [g, k] : cn) {
            const auto it = rn.find(g);
            matches[n - 1] += std::min(k, it == rn.end() ? 0 : it->second);
            totals[n - 1] += k;
        }
    }
}

double brevity(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    return c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

}  // namespace

std::string BleuResult::format() const {
    std::ostringstream out;
    out << "BLEU = " << fixed(score, 2) << ' ';
    for (std::size_t n = 0; n < 4; ++n) out << (n ? "/" : "") << matches[n] << ':' << totals[n];
    out << " (BP=" << fixed(brevity_penalty, 4) << ", hyp_len=" << candidate_length
        << ", ref_len=" << reference_length << ")";
    return out.str();
}

BleuResult bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references) {
    if (candidates.empty()) {
        throw DataError("bleu: empty candidate set");
    }
    if (candidates.size() != references.size()) {
        throw DataError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
    }
    BleuResult r;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        count(candidates[i], references[i], r.matches, r.totals);
        r.candidate_length += candidates[i].size();
        r.reference_length += references[i].size();
    }
    r.brevity_penalty = brevity(r.candidate_length, r.reference_length);
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (r.matches[n] == 0) return r;
        log_sum += std::log(static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]));
    }
    // Exact equality gives exactly 100 rather than 100 * exp(0) rounding.
    r.score = r.brevity_penalty == 1.0 && r.matches == r.totals ? 100.0
                                                                : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
    return r;
}

double sentence_bleu(const Sentence& candidate, const Sentence& reference) {
    std::array<std::size_t, 4> m{}, t{};
    count(candidate, reference, m, t);
    if (m[0] == 0) return 0.0;
    double log_sum = std::log(static_cast<double>(m[0]) / static_cast<double>(t[0]));
    for (std::size_t n = 1; n < 4; ++n) {
        log_sum += std::log(static_cast<double>(m[n] + 1) / static_cast<double>(t[n] + 1));
    }
    return 100.0 * brevity(candidate.size(), reference.size()) * std::exp(log_sum / 4.0);
}

double binomial_two_sided(std::size_t wins, std::size_t losses) {
    const std::size_t n = wins + losses;
    if (n == 0) return 1.0;
    const std::size_t k = std::min(wins, losses);
    const double log_half_n = static_cast<double>(n) * std::log(0.5);
    const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
        tail += std::exp(lg_n1 - std::lgamma(static_cast<double>(i) + 1.0) -
                         std::lgamma(static_cast<double>(n - i) + 1.0) + log_half_n);
    }
    return std::min(1.0, 2.0 * tail);
}

SignTestResult sign_test(const std::vector<Sentence>& a, const std::vector<Sentence>& b,
                         const std::vector<Sentence>& references) {
    if (a.size() != references.size() || b.size() != references.size()) {
        throw DataError("sign_test: systems and references differ in length");
    }
    SignTestResult r;
    for (std::size_t i = 0; i < references.size(); ++i) {
        const double sa = sentence_bleu(a[i], references[i]);
        const double sb = sentence_bleu(b[i], references[i]);
        if (sa > sb) {
            ++r.wins;
        } else if (sb > sa) {
            ++r.losses;
        } else {
            ++r.ties;
        }
    }
    r.all_ties = r.wins + r.losses == 0;
    r.p_value = binomial_two_sided(r.wins, r.losses);
    return r;
}

DpRecall dp_token_recall(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                         const std::vector<std::vector<Insertion>>& drops) {
    if (hypotheses.size() != references.size() || drops.size() != references.size()) {
        throw DataError("dp_token_recall: hypotheses, references and drop logs differ in length");
    }
    DpRecall r;
    for (std::size_t i = 0; i < references.size(); ++i) {
        std::map<std::string, std::size_t> dropped;
        for (const auto& d : drops[i]) {
            if (d.target_index < 0 || static_cast<std::size_t>(d.target_index) >= references[i].size()) {
                throw DataError("dp_token_recall: drop in sentence " + std::to_string(i) +
                                " has no valid target index");
            }
            ++dropped[fold_case(references[i][static_cast<std::size_t>(d.target_index)])];
        }
        for (const auto& [p, d] : dropped) {
            auto occurrences = [&](const Sentence& s) {
                return static_cast<std::size_t>(
                    std::count_if(s.begin(), s.end(), [&](const std::string& w) { return fold_case(w) == p; }));
            };
            const std::size_t kept = occurrences(references[i]) - d;
            const std::size_t h = occurrences(hypotheses[i]);
            r.matched += std::min(h > kept ? h - kept : 0, d);
            r.dropped += d;
        }
    }
    return r;
}

}  // namespace dpnmt
