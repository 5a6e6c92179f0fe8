#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dpnmt {

using Sentence = std::vector<std::string>;

// Token <-> id map. Ids 0..3 are reserved: <pad>, <unk>, <s>, </s>.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr std::size_t kReservedCount = 4;
    static const std::array<std::string, kReservedCount>& reserved();

    Vocabulary();

    // Returns the existing id when the token is already present.
    int add(const std::string& token);
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    // Out-of-vocabulary tokens map to kUnk.
    int id(const std::string& token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }

    std::vector<int> encode(const Sentence& tokens, bool append_eos = true) const;
    // Drops a trailing </s> and any padding.
    Sentence decode(std::span<const int> ids) const;

    // One token per line in id order, reserved tokens first.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct VocabBuild {
    Vocabulary vocab;
    double coverage = 0.0;
};

// Keeps the cap most frequent tokens (ties broken by first occurrence).
// coverage = occurrences of kept tokens / all token occurrences.
VocabBuild build_vocab(const std::vector<Sentence>& corpus, std::size_t cap);

}  // namespace dpnmt
