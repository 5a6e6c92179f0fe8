#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dpnmt/cli.hpp"
#include "dpnmt/corpus_eval.hpp"
#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/error.hpp"

namespace py = pybind11;
using namespace dpnmt;

namespace {

Sentence split(const std::string& line) {
    Sentence out;
    std::istringstream in(line);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::vector<Sentence> split_all(const std::vector<std::string>& lines) {
    std::vector<Sentence> out;
    out.reserve(lines.size());
    for (const auto& l : lines) out.push_back(split(l));
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> pairs(const Alignment& a) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& l : a) out.emplace_back(l.source, l.target);
    return out;
}

}  // namespace

PYBIND11_MODULE(_dpnmt, m) {
    m.doc() = "Dropped-pronoun aware NMT toolkit: metrics, synthetic data, alignment and labelling";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<BleuResult>(m, "BleuResult")
        .def_readonly("score", &BleuResult::score)
        .def_readonly("matches", &BleuResult::matches)
        .def_readonly("totals", &BleuResult::totals)
        .def_readonly("candidate_length", &BleuResult::candidate_length)
        .def_readonly("reference_length", &BleuResult::reference_length)
        .def_readonly("brevity_penalty", &BleuResult::brevity_penalty)
        .def("__str__", &BleuResult::format);

    py::class_<SignTestResult>(m, "SignTestResult")
        .def_readonly("wins", &SignTestResult::wins)
        .def_readonly("losses", &SignTestResult::losses)
        .def_readonly("ties", &SignTestResult::ties)
        .def_readonly("p_value", &SignTestResult::p_value)
        .def_readonly("all_ties", &SignTestResult::all_ties);

    m.def(
        "bleu", [](const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
            return bleu(split_all(hyp), split_all(ref));
        },
        py::arg("candidates"), py::arg("references"), "Corpus BLEU-4, case-insensitive, unsmoothed.");
    m.def(
        "sentence_bleu", [](const std::string& hyp, const std::string& ref) { return sentence_bleu(split(hyp), split(ref)); },
        py::arg("candidate"), py::arg("reference"));
    m.def(
        "sign_test",
        [](const std::vector<std::string>& a, const std::vector<std::string>& b, const std::vector<std::string>& ref) {
            return sign_test(split_all(a), split_all(b), split_all(ref));
        },
        py::arg("a"), py::arg("b"), py::arg("references"));

    m.def(
        "synth_corpus",
        [](std::size_t n, double drop_rate, std::uint64_t seed) {
            py::list out;
            for (const auto& p : synth_corpus(SynthGrammar::standard(drop_rate, seed), n)) {
                py::list drops;
                for (const auto& d : p.drops) drops.append(py::make_tuple(d.position, d.token, d.target_index));
                py::dict row;
                row["source"] = join(p.source);
                row["target"] = join(p.target);
                row["labelled"] = join(p.labelled);
                row["alignment"] = pairs(p.alignment);
                row["drops"] = drops;
                out.append(row);
            }
            return out;
        },
        py::arg("n"), py::arg("drop_rate") = 0.3, py::arg("seed") = 1,
        "Pairs from the built-in synthetic pro-drop grammar, as dicts.");

    m.def(
        "em_align",
        [](const std::vector<std::string>& src, const std::vector<std::string>& tgt, std::size_t iterations) {
            std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out;
            for (const auto& a : em_align(split_all(src), split_all(tgt), iterations).links) out.push_back(pairs(a));
            return out;
        },
        py::arg("sources"), py::arg("targets"), py::arg("iterations") = 10,
        "IBM Model 1 links (intersection of both directions) per pair.");

    m.def(
        "label_parallel",
        [](const std::string& x, const std::string& y, const std::string& pharaoh,
           const std::vector<std::string>& source_pronouns, const std::vector<std::string>& target_pronouns,
           const std::vector<std::tuple<std::string, std::string, double>>& lexicon) {
            PronounInventory inv{source_pronouns, target_pronouns};
            PronounLexicon lex;
            for (const auto& [t, s, p] : lexicon) lex.add(t, s, p);
            const LabeledSentence r = label_parallel(split(x), split(y), parse_pharaoh(pharaoh), inv, lex);
            py::list ins;
            for (const auto& i : r.insertions) ins.append(py::make_tuple(i.position, i.token, i.target_index));
            return py::make_tuple(join(r.tokens), ins);
        },
        py::arg("source"), py::arg("target"), py::arg("alignment"), py::arg("source_pronouns"),
        py::arg("target_pronouns"), py::arg("lexicon"),
        "Insert unaligned target pronouns into the source; returns (x_hat, insertions).");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = dispatch(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run one dpnmt command line; returns (exit_code, stdout, stderr).");
}
