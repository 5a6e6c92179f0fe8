#include "dpnmt/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "dpnmt/error.hpp"

namespace dpnmt {

const std::array<std::string, Vocabulary::kReservedCount>& Vocabulary::reserved() {
    static const std::array<std::string, kReservedCount> names = {"<pad>", "<unk>", "<s>", "</s>"};
    return names;
}

Vocabulary::Vocabulary() {
    for (const auto& t : reserved()) {
        add(t);
    }
}

int Vocabulary::add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) {
        return it->second;
    }
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw DataError("token id " + std::to_string(id) + " out of vocabulary range " +
                        std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Sentence& tokens, bool append_eos) const {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    for (const auto& t : tokens) {
        ids.push_back(id(t));
    }
    if (append_eos) {
        ids.push_back(kEos);
    }
    return ids;
}

Sentence Vocabulary::decode(std::span<const int> ids) const {
    Sentence out;
    for (int id : ids) {
        if (id == kEos) {
            break;
        }
        if (id == kPad || id == kBos) {
            continue;
        }
        out.push_back(token(id));
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write vocabulary " + path.string());
    }
    for (const auto& t : tokens_) {
        out << t << '\n';
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read vocabulary " + path.string());
    }
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        if (lineno < kReservedCount) {
            if (line != reserved()[lineno]) {
                throw DataError(path.string() + ": line " + std::to_string(lineno + 1) +
                                " must be reserved token " + reserved()[lineno]);
            }
        } else {
            if (v.contains(line)) {
                throw DataError(path.string() + ": duplicate token '" + line + "'");
            }
            v.add(line);
        }
        ++lineno;
    }
    return v;
}

VocabBuild build_vocab(const std::vector<Sentence>& corpus, std::size_t cap) {
    if (cap < 1) {
        throw DataError("build_vocab: cap must be >= 1");
    }
    struct Entry {
        std::size_t count = 0;
        std::size_t first = 0;
    };
    std::unordered_map<std::string, Entry> stats;
    std::vector<std::string> order;
    std::size_t total = 0;
    for (const auto& sentence : corpus) {
        for (const auto& tok : sentence) {
            auto [it, fresh] = stats.try_emplace(tok);
            if (fresh) {
                it->second.first = order.size();
                order.push_back(tok);
            }
            ++it->second.count;
            ++total;
        }
    }
    if (total == 0) {
        throw DataError("build_vocab: empty corpus");
    }
    std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
        return stats[a].count > stats[b].count;
    });
    VocabBuild out;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < order.size() && i < cap; ++i) {
        out.vocab.add(order[i]);
        kept += stats[order[i]].count;
    }
    out.coverage = static_cast<double>(kept) / static_cast<double>(total);
    return out;
}

}  // namespace dpnmt
