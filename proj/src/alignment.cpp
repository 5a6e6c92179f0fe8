#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/error.hpp"

namespace dpnmt {

std::string format_pharaoh(const Alignment& links) {
    std::string out;
    for (const auto& l : links) {
        if (!out.empty()) out += ' ';
        out += std::to_string(l.source) + "-" + std::to_string(l.target);
    }
    return out;
}

Alignment parse_pharaoh(const std::string& line) {
    Alignment out;
    std::istringstream in(line);
    std::string item;
    while (in >> item) {
        const auto dash = item.find('-');
        std::size_t used_a = 0, used_b = 0;
        try {
            if (dash == std::string::npos) throw std::invalid_argument("no dash");
            const std::string a = item.substr(0, dash), b = item.substr(dash + 1);
            const unsigned long i = std::stoul(a, &used_a);
            const unsigned long j = std::stoul(b, &used_b);
            if (used_a != a.size() || used_b != b.size() || a[0] == '-' || b[0] == '-') {
                throw std::invalid_argument("trailing characters");
            }
            out.push_back({i, j});
        } catch (const std::exception&) {
            throw DataError("malformed alignment link '" + item + "'");
        }
    }
    return out;
}

void check_alignment(const Alignment& links, std::size_t source_len, std::size_t target_len) {
    for (const auto& l : links) {
        if (l.source >= source_len || l.target >= target_len) {
            throw DataError("alignment link " + std::to_string(l.source) + "-" +
                            std::to_string(l.target) + " outside a " + std::to_string(source_len) +
                            "x" + std::to_string(target_len) + " sentence pair");
        }
    }
}

namespace {

class Interner {
  public:
    Interner() { names_.push_back(kNullToken); }
    int id(const std::string& s) {
        auto [it, fresh] = ids_.try_emplace(s, static_cast<int>(names_.size()));
        if (fresh) names_.push_back(s);
        return it->second;
    }
    const std::string& name(int id) const { return names_[static_cast<std::size_t>(id)]; }

  private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> names_;
};

std::uint64_t key(int f, int e) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(f)) << 32) |
           static_cast<std::uint32_t>(e);
}

using Sparse = std::unordered_map<std::uint64_t, double>;

TranslationTable to_table(const Sparse& t, const Interner& fs, const Interner& es) {
    TranslationTable out;
    for (const auto& [k, v] : t) {
        out[fs.name(static_cast<int>(k >> 32))][es.name(static_cast<int>(k & 0xffffffffu))] = v;
    }
    return out;
}

// Model 1 t(e | f) with f = 0 as NULL. Returns, per pair, the Viterbi source
// index (-1 for NULL) of every e token.
std::vector<std::vector<long>> model1(const std::vector<std::vector<int>>& F,
                                      const std::vector<std::vector<int>>& E, std::size_t iterations,
                                      const Interner& fnames, const Interner& enames,
                                      const std::string& direction,
                                      const std::function<void(const std::string&, std::size_t,
                                                               const TranslationTable&)>& cb,
                                      TranslationTable& final_table) {
    Sparse t;
    for (std::size_t s = 0; s < F.size(); ++s) {
        for (int e : E[s]) {
            t[key(0, e)] = 1.0;
            for (int f : F[s]) t[key(f, e)] = 1.0;
        }
    }
    for (std::size_t it = 1; it <= iterations; ++it) {
        Sparse counts;
        std::unordered_map<int, double> totals;
        for (std::size_t s = 0; s < F.size(); ++s) {
            for (int e : E[s]) {
                double denom = t[key(0, e)];
                for (int f : F[s]) denom += t[key(f, e)];
                auto add = [&](int f) {
                    const double c = t[key(f, e)] / denom;
                    counts[key(f, e)] += c;
                    totals[f] += c;
                };
                add(0);
                for (int f : F[s]) add(f);
            }
        }
        for (auto& [k, v] : counts) v /= totals[static_cast<int>(k >> 32)];
        t = std::move(counts);
        if (cb) cb(direction, it, to_table(t, fnames, enames));
    }
    final_table = to_table(t, fnames, enames);

    std::vector<std::vector<long>> viterbi(F.size());
    for (std::size_t s = 0; s < F.size(); ++s) {
        for (int e : E[s]) {
            long best = -1;
            double best_p = t[key(0, e)];
            for (std::size_t i = 0; i < F[s].size(); ++i) {
                const double p = t[key(F[s][i], e)];
                if (p > best_p || (best == -1 && p == best_p)) {
                    best_p = p;
                    best = static_cast<long>(i);
                }
            }
            viterbi[s].push_back(best);
        }
    }
    return viterbi;
}

}  // namespace

AlignResult em_align(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets,
                     std::size_t iterations,
                     const std::function<void(const std::string&, std::size_t,
                                              const TranslationTable&)>& on_iteration) {
    if (sources.empty()) {
        throw DataError("em_align: empty corpus");
    }
    if (sources.size() != targets.size()) {
        throw DataError("em_align: " + std::to_string(sources.size()) + " source vs " +
                        std::to_string(targets.size()) + " target sentences");
    }
    if (iterations < 1) {
        throw DataError("em_align: iterations must be >= 1");
    }
    Interner src_names, tgt_names;
    std::vector<std::vector<int>> S(sources.size()), T(targets.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        for (const auto& w : sources[i]) S[i].push_back(src_names.id(w));
        for (const auto& w : targets[i]) T[i].push_back(tgt_names.id(w));
    }
    AlignResult out;
    const auto s2t = model1(S, T, iterations, src_names, tgt_names, "s2t", on_iteration,
                            out.target_given_source);
    const auto t2s = model1(T, S, iterations, tgt_names, src_names, "t2s", on_iteration,
                            out.source_given_target);
    out.links.resize(sources.size());
    for (std::size_t s = 0; s < sources.size(); ++s) {
        for (std::size_t j = 0; j < T[s].size(); ++j) {
            const long i = s2t[s][j];
            if (i >= 0 && t2s[s][static_cast<std::size_t>(i)] == static_cast<long>(j)) {
                out.links[s].push_back({static_cast<std::size_t>(i), j});
            }
        }
        std::sort(out.links[s].begin(), out.links[s].end());
    }
    return out;
}

}  // namespace dpnmt
