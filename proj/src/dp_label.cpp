#include <algorithm>
#include <fstream>
#include <sstream>

#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/error.hpp"

namespace dpnmt {

std::string fold_case(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

bool PronounInventory::is_source(const std::string& tok) const {
    return std::find(source.begin(), source.end(), tok) != source.end();
}

bool PronounInventory::is_target(const std::string& tok) const {
    const std::string f = fold_case(tok);
    return std::any_of(target.begin(), target.end(), [&](const std::string& t) { return fold_case(t) == f; });
}

PronounInventory PronounInventory::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read pronoun inventory " + path.string());
    }
    PronounInventory inv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key = tokens");
        }
        std::istringstream key_in(line.substr(0, eq));
        std::string key;
        key_in >> key;
        std::istringstream vals(line.substr(eq + 1));
        std::vector<std::string>* dest = key == "source" ? &inv.source : key == "target" ? &inv.target : nullptr;
        if (!dest) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        for (std::string tok; vals >> tok;) dest->push_back(tok);
    }
    return inv;
}

void PronounInventory::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out << "source =";
    for (const auto& s : source) out << ' ' << s;
    out << "\ntarget =";
    for (const auto& t : target) out << ' ' << t;
    out << '\n';
}

void PronounLexicon::add(const std::string& target, const std::string& source, double prob) {
    if (!(prob > 0.0 && prob <= 1.0)) {
        throw DataError("lexicon probability for " + target + " -> " + source + " outside (0, 1]");
    }
    auto& list = table_[fold_case(target)];
    list.push_back({source, prob});
    std::stable_sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) { return a.prob > b.prob; });
}

bool PronounLexicon::contains(const std::string& target) const { return table_.count(fold_case(target)) > 0; }

const std::vector<PronounLexicon::Entry>& PronounLexicon::entries(const std::string& target) const {
    const auto it = table_.find(fold_case(target));
    if (it == table_.end()) {
        throw DataError("no lexicon entry for pronoun '" + target + "'");
    }
    return it->second;
}

const std::string& PronounLexicon::top(const std::string& target) const { return entries(target).front().source; }

PronounLexicon PronounLexicon::from_table(const TranslationTable& source_given_target,
                                          const PronounInventory& inventory) {
    // Case variants of a target pronoun are pooled.
    std::map<std::string, std::map<std::string, double>> pooled;
    for (const auto& [target, row] : source_given_target) {
        if (target == kNullToken || !inventory.is_target(target)) continue;
        for (const auto& [source, p] : row) {
            if (inventory.is_source(source) && p > 0.0) pooled[fold_case(target)][source] += p;
        }
    }
    PronounLexicon lex;
    for (const auto& [target, row] : pooled) {
        double mass = 0.0;
        for (const auto& [source, p] : row) mass += p;
        for (const auto& [source, p] : row) lex.add(target, source, std::min(1.0, p / mass));
    }
    return lex;
}

PronounLexicon PronounLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read pronoun lexicon " + path.string());
    }
    PronounLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string target, source, prob;
        if (!std::getline(fields, target, '\t') || !std::getline(fields, source, '\t') ||
            !std::getline(fields, prob)) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected target<TAB>source<TAB>prob");
        }
        try {
            lex.add(target, source, std::stod(prob));
        } catch (const std::invalid_argument&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad probability '" + prob + "'");
        }
    }
    return lex;
}

void PronounLexicon::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out.precision(17);
    for (const auto& [target, list] : table_) {
        for (const auto& e : list) out << target << '\t' << e.source << '\t' << e.prob << '\n';
    }
}

Sentence LabeledSentence::strip() const {
    std::vector<std::size_t> positions;
    for (const auto& ins : insertions) positions.push_back(ins.position);
    std::sort(positions.begin(), positions.end());
    std::vector<bool> inserted(tokens.size(), false);
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const std::size_t at = positions[k] + k;
        if (at >= tokens.size()) {
            throw DataError("insertion position " + std::to_string(positions[k]) + " outside the sentence");
        }
        inserted[at] = true;
    }
    Sentence out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!inserted[i]) out.push_back(tokens[i]);
    }
    return out;
}

LabeledSentence apply_insertions(const Sentence& x, std::vector<Insertion> insertions) {
    std::stable_sort(insertions.begin(), insertions.end(),
                     [](const Insertion& a, const Insertion& b) { return a.position < b.position; });
    LabeledSentence out;
    std::size_t k = 0;
    for (std::size_t gap = 0; gap <= x.size(); ++gap) {
        for (; k < insertions.size() && insertions[k].position == gap; ++k) {
            out.tokens.push_back(insertions[k].token);
        }
        if (gap < x.size()) out.tokens.push_back(x[gap]);
    }
    if (k != insertions.size()) {
        throw DataError("insertion position " + std::to_string(insertions[k].position) +
                        " beyond a sentence of " + std::to_string(x.size()) + " tokens");
    }
    out.insertions = std::move(insertions);
    return out;
}

LabeledSentence label_parallel(const Sentence& x, const Sentence& y, const Alignment& links,
                               const PronounInventory& inventory, const PronounLexicon& lexicon,
                               std::vector<std::string>* warnings) {
    check_alignment(links, x.size(), y.size());
    // Largest source index linked to each target token, -1 if unaligned.
    std::vector<long> src_of(y.size(), -1);
    for (const auto& l : links) {
        src_of[l.target] = std::max(src_of[l.target], static_cast<long>(l.source));
    }
    std::vector<Insertion> ins;
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (src_of[j] >= 0 || !inventory.is_target(y[j])) continue;
        if (!lexicon.contains(y[j])) {
            if (warnings) warnings->push_back("pronoun '" + y[j] + "' has no lexicon entry; not projected");
            continue;
        }
        std::size_t position = 0;
        for (std::size_t k = j; k-- > 0;) {
            if (src_of[k] >= 0) {
                position = static_cast<std::size_t>(src_of[k]) + 1;
                break;
            }
        }
        ins.push_back({position, lexicon.top(y[j]), static_cast<long>(j)});
    }
    return apply_insertions(x, std::move(ins));
}

LabellingScore labelling_f1(const std::vector<LabeledSentence>& predicted,
                            const std::vector<LabeledSentence>& gold) {
    if (predicted.size() != gold.size()) {
        throw DataError("labelling_f1: " + std::to_string(predicted.size()) + " predicted vs " +
                        std::to_string(gold.size()) + " gold sentences");
    }
    LabellingScore s;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        std::multiset<std::pair<std::size_t, std::string>> g;
        for (const auto& ins : gold[i].insertions) g.insert({ins.position, ins.token});
        s.gold += gold[i].insertions.size();
        s.predicted += predicted[i].insertions.size();
        for (const auto& ins : predicted[i].insertions) {
            const auto it = g.find({ins.position, ins.token});
            if (it != g.end()) {
                ++s.correct;
                g.erase(it);
            }
        }
    }
    s.precision = s.predicted ? static_cast<double>(s.correct) / static_cast<double>(s.predicted) : 0.0;
    s.recall = s.gold ? static_cast<double>(s.correct) / static_cast<double>(s.gold) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

void write_insertion_log(const std::filesystem::path& path,
                         const std::vector<LabeledSentence>& corpus) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (const auto& ins : corpus[i].insertions) {
            out << i << '\t' << ins.position << '\t' << ins.token;
            if (ins.target_index >= 0) out << '\t' << ins.target_index;
            out << '\n';
        }
    }
}

std::vector<std::vector<Insertion>> read_insertion_log(const std::filesystem::path& path,
                                                       std::size_t sentences) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read insertion log " + path.string());
    }
    std::vector<std::vector<Insertion>> out(sentences);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string a, b, tok, target;
        if (!std::getline(fields, a, '\t') || !std::getline(fields, b, '\t') || !std::getline(fields, tok, '\t')) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected sentence<TAB>position<TAB>token");
        }
        std::getline(fields, target);
        std::size_t s = 0, p = 0;
        long t = -1;
        try {
            s = std::stoul(a);
            p = std::stoul(b);
            if (!target.empty()) t = std::stol(target);
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad index");
        }
        if (s >= sentences) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": sentence index " + a + " out of range");
        }
        out[s].push_back({p, tok, t});
    }
    return out;
}

}  // namespace dpnmt
