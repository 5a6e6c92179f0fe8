#include "dpnmt/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <deque>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dpnmt/corpus_eval.hpp"
#include "dpnmt/decoding.hpp"
#include "dpnmt/dp_annotation.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/experiment.hpp"
#include "dpnmt/gradcheck.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/training.hpp"

namespace dpnmt {

namespace {

namespace fs = std::filesystem;
using Settings = std::map<std::string, std::string>;

struct Common {
    std::uint64_t seed = 1;
    std::string config;
    std::vector<std::string> sets;
    bool dry_run = false;
    std::size_t workers = 1;
    int verbose = 0;
};

// A subcommand: its CLI11 app, the settings it understands, and its body.
struct Command {
    CLI::App* app = nullptr;
    Settings defaults;
    // Flag values that override config-file settings when given.
    std::vector<std::pair<CLI::Option*, std::function<std::string()>>> overrides;
    std::vector<std::pair<CLI::Option*, std::string>> override_keys;
    std::function<int(const Settings&)> run;
};

Settings read_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read config file " + path.string());
    }
    Settings s;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string v) {
            v.erase(0, v.find_first_not_of(" \t\r"));
            v.erase(v.find_last_not_of(" \t\r") + 1);
            return v;
        };
        s[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return s;
}

void merge(Settings& into, const Settings& from, const std::string& origin) {
    for (const auto& [k, v] : from) {
        if (!into.count(k)) {
            std::string known;
            for (const auto& [name, _] : into) known += (known.empty() ? "" : ", ") + name;
            throw DataError(origin + ": unknown setting '" + k + "' (known: " + known + ")");
        }
        into[k] = v;
    }
}

void require_file(const std::string& path, const char* what) {
    if (path.empty()) return;
    if (!fs::is_regular_file(path)) {
        throw DataError(std::string(what) + " '" + path + "' does not exist");
    }
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) {
        throw DataError(std::string(what) + " '" + path + "' is not a directory");
    }
}

void require_writable_parent(const fs::path& path) {
    fs::path parent = fs::absolute(path).parent_path();
    while (!parent.empty() && !fs::exists(parent)) parent = parent.parent_path();
    if (parent.empty() || !fs::is_directory(parent)) {
        throw DataError("cannot create output " + path.string());
    }
}

void write_settings(const fs::path& path, const std::string& command, const Common& common, const Settings& s) {
    std::ofstream out(path);
    out << "command=" << command << '\n' << "seed=" << common.seed << '\n';
    for (const auto& [k, v] : s) out << k << '=' << v << '\n';
}

std::size_t to_size(const Settings& s, const std::string& k) {
    try {
        return std::stoul(s.at(k));
    } catch (const std::logic_error&) {
        throw DataError("setting " + k + " must be a non-negative integer, got '" + s.at(k) + "'");
    }
}

double to_double(const Settings& s, const std::string& k) {
    try {
        return std::stod(s.at(k));
    } catch (const std::logic_error&) {
        throw DataError("setting " + k + " must be a number, got '" + s.at(k) + "'");
    }
}

Settings subset(const Settings& s, const Settings& keys) {
    Settings out;
    for (const auto& [k, _] : keys) {
        if (s.count(k)) out[k] = s.at(k);
    }
    return out;
}

std::vector<std::vector<int>> encode_all(const Vocabulary& v, const std::vector<Sentence>& lines) {
    std::vector<std::vector<int>> out;
    for (const auto& s : lines) out.push_back(v.encode(s));
    return out;
}

void check_same_length(std::size_t a, std::size_t b, const std::string& what) {
    if (a != b) {
        throw DataError(what + ": " + std::to_string(a) + " vs " + std::to_string(b) + " lines");
    }
}

std::vector<LabeledSentence> labelled_from_log(const std::vector<Sentence>& x_hat,
                                               const std::vector<std::vector<Insertion>>& log) {
    std::vector<LabeledSentence> out;
    for (std::size_t i = 0; i < x_hat.size(); ++i) {
        LabeledSentence s{x_hat[i], log[i]};
        s.strip();  // validates positions
        out.push_back(std::move(s));
    }
    return out;
}

// A trained translation model directory.
struct LoadedModel {
    ModelConfig config;
    Vocabulary source_vocab;
    Vocabulary target_vocab;
    ParameterSet params;
};

LoadedModel load_model(const fs::path& dir, const std::string& checkpoint) {
    LoadedModel m;
    m.config = ModelConfig::from_kv(read_config(dir / "model.txt"));
    m.source_vocab = Vocabulary::load(dir / "vocab.src");
    m.target_vocab = Vocabulary::load(dir / "vocab.tgt");
    fs::path ckpt = checkpoint;
    if (checkpoint.empty()) {
        std::ifstream best(dir / "best");
        std::string name;
        if (!(best >> name)) throw DataError("model directory " + dir.string() + " has no 'best' pointer");
        ckpt = dir / name;
    }
    m.params = load_checkpoint(ckpt);
    return m;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dropped-pronoun aware neural machine translation toolkit"};
    app.name("dpnmt");
    app.require_subcommand(1);
    Common common;
    if (const char* env = std::getenv("DPNMT_WORKERS")) {
        try {
            common.workers = std::max<std::size_t>(1, std::stoul(env));
        } catch (const std::logic_error&) {
            err << "ignoring DPNMT_WORKERS='" << env << "'\n";
        }
    }
    app.option_defaults()->always_capture_default();
    app.add_option("--seed", common.seed, "Random seed");
    app.add_option("--config", common.config, "key=value configuration file");
    app.add_option("--set", common.sets, "Override one setting, key=value (repeatable)");
    app.add_flag("--dry-run", common.dry_run, "Validate configuration and inputs without writing anything");
    app.add_option("--workers", common.workers, "Worker threads (default from DPNMT_WORKERS)")
        ->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", common.verbose, "Print progress");

    // Option storage lives as long as this call; a deque keeps references stable.
    std::deque<std::string> strings;
    auto text = [&](const char* init = "") -> std::string& { return strings.emplace_back(init); };
    std::map<std::string, Command> commands;
    std::string active;

    // Settings precedence: defaults < config file < --set < explicit flags.
    auto effective = [&](Command& c) {
        Settings s = c.defaults;
        if (!common.config.empty()) merge(s, read_config(common.config), common.config);
        Settings sets;
        for (const auto& kv : common.sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
            sets[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
        merge(s, sets, "--set");
        for (const auto& [opt, key] : c.override_keys) {
            if (opt->count() > 0) s[key] = opt->as<std::string>();
        }
        return s;
    };
    auto summary = [&](const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& fields) {
        out << "dpnmt " << cmd << " status=ok";
        for (const auto& [k, v] : fields) out << ' ' << k << '=' << v;
        out << '\n';
    };
    auto note = [&](const std::string& msg) {
        if (common.verbose) err << msg << '\n';
    };
    auto dry = [&](const std::string& cmd) {
        summary(cmd, {{"dry_run", "1"}});
        return kExitOk;
    };
    auto fmt = [](double v, int digits = 6) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*f", digits, v);
        return std::string(buf);
    };
    auto flag = [](Command& c, CLI::Option* opt, const std::string& key) { c.override_keys.emplace_back(opt, key); };

    // ------------------------------------------------------------ synth
    {
        Command& c = commands["synth"];
        c.app = app.add_subcommand("synth", "Generate a synthetic pro-drop parallel corpus");
        std::string &out_dir = text();
        c.app->add_option("--out", out_dir, "Output directory")->required();
        std::string* sizes[3] = {&text(), &text(), &text()};
        std::string &drop = text();
        c.defaults = {{"train_size", "10000"}, {"tune_size", "500"}, {"test_size", "500"}, {"drop_rate", "0.3"}};
        flag(c, c.app->add_option("--train", *sizes[0], "Training pairs"), "train_size");
        flag(c, c.app->add_option("--tune", *sizes[1], "Tuning pairs"), "tune_size");
        flag(c, c.app->add_option("--test", *sizes[2], "Test pairs"), "test_size");
        flag(c, c.app->add_option("--drop-rate", drop, "Probability of dropping each pronoun"), "drop_rate");
        c.run = [&](const Settings& s) {
            SynthGrammar g = SynthGrammar::standard(to_double(s, "drop_rate"), common.seed);
            g.validate();
            const std::size_t n[3] = {to_size(s, "train_size"), to_size(s, "tune_size"), to_size(s, "test_size")};
            require_writable_parent(out_dir);
            if (common.dry_run) return dry("synth");
            const auto pairs = synth_corpus(g, n[0] + n[1] + n[2]);
            fs::create_directories(out_dir);
            const char* names[3] = {"train", "tune", "test"};
            std::size_t offset = 0;
            for (int k = 0; k < 3; ++k) {
                std::vector<Sentence> x, y, xh;
                std::vector<Alignment> al;
                std::vector<LabeledSentence> lab;
                for (std::size_t i = offset; i < offset + n[k]; ++i) {
                    x.push_back(pairs[i].source);
                    y.push_back(pairs[i].target);
                    xh.push_back(pairs[i].labelled);
                    al.push_back(pairs[i].alignment);
                    lab.push_back(apply_insertions(pairs[i].source, pairs[i].drops));
                }
                offset += n[k];
                const fs::path base = fs::path(out_dir) / names[k];
                write_corpus(base.string() + ".src", x);
                write_corpus(base.string() + ".tgt", y);
                write_corpus(base.string() + ".xhat", xh);
                write_alignments(base.string() + ".align", al);
                write_insertion_log(base.string() + ".drops", lab);
            }
            g.inventory().save(fs::path(out_dir) / "inventory.txt");
            write_settings(fs::path(out_dir) / "config.txt", "synth", common, s);
            std::size_t drops = 0;
            for (const auto& p : pairs) drops += p.drops.size();
            summary("synth", {{"pairs", std::to_string(pairs.size())}, {"drops", std::to_string(drops)}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ align
    {
        Command& c = commands["align"];
        c.app = app.add_subcommand("align", "IBM Model 1 word alignment in both directions, intersected");
        std::string &src = text(), &tgt = text(), &out_path = text(), &inventory = text(), &lexicon_out = text(), &iters = text();
        c.app->add_option("--src", src, "Source corpus")->required();
        c.app->add_option("--tgt", tgt, "Target corpus")->required();
        c.app->add_option("--out", out_path, "Pharaoh alignment output")->required();
        c.app->add_option("--inventory", inventory, "Pronoun inventory (needed for --lexicon)");
        c.app->add_option("--lexicon", lexicon_out, "Write the pronoun lexicon learnt from the alignment");
        c.defaults = {{"iterations", "10"}};
        flag(c, c.app->add_option("--iterations", iters, "EM iterations"), "iterations");
        c.run = [&](const Settings& s) {
            require_file(src, "--src");
            require_file(tgt, "--tgt");
            require_file(inventory, "--inventory");
            if (!lexicon_out.empty() && inventory.empty()) throw DataError("--lexicon needs --inventory");
            const std::size_t iterations = to_size(s, "iterations");
            if (iterations < 1) throw DataError("iterations must be >= 1");
            const auto x = read_corpus(src), y = read_corpus(tgt);
            check_same_length(x.size(), y.size(), "--src/--tgt");
            require_writable_parent(out_path);
            if (common.dry_run) return dry("align");
            const AlignResult r = em_align(x, y, iterations, [&](const std::string& dir, std::size_t it, const TranslationTable&) {
                note("EM " + dir + " iteration " + std::to_string(it));
            });
            write_alignments(out_path, r.links);
            if (!lexicon_out.empty()) {
                PronounLexicon::from_table(r.source_given_target, PronounInventory::load(inventory)).save(lexicon_out);
            }
            write_settings(out_path + ".config", "align", common, s);
            std::size_t links = 0;
            for (const auto& l : r.links) links += l.size();
            summary("align", {{"pairs", std::to_string(x.size())}, {"links", std::to_string(links)}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ annotate
    {
        Command& c = commands["annotate"];
        c.app = app.add_subcommand("annotate", "Label dropped pronouns in the source from alignments");
        std::string &src = text(), &tgt = text(), &align = text(), &inventory = text(), &lexicon = text(), &out_path = text(), &log_path = text();
        c.app->add_option("--src", src, "Source corpus")->required();
        c.app->add_option("--tgt", tgt, "Target corpus")->required();
        c.app->add_option("--align", align, "Pharaoh alignments")->required();
        c.app->add_option("--inventory", inventory, "Pronoun inventory")->required();
        c.app->add_option("--lexicon", lexicon, "Pronoun lexicon (target<TAB>source<TAB>prob)")->required();
        c.app->add_option("--out", out_path, "Labelled source output")->required();
        c.app->add_option("--log", log_path, "Insertion log output (default <out>.insertions)");
        c.run = [&](const Settings& s) {
            for (const auto& [p, w] : {std::pair{&src, "--src"}, {&tgt, "--tgt"}, {&align, "--align"},
                                       {&inventory, "--inventory"}, {&lexicon, "--lexicon"}}) {
                require_file(*p, w);
            }
            const auto x = read_corpus(src), y = read_corpus(tgt);
            const auto links = read_alignments(align);
            check_same_length(x.size(), y.size(), "--src/--tgt");
            check_same_length(x.size(), links.size(), "--src/--align");
            const PronounInventory inv = PronounInventory::load(inventory);
            const PronounLexicon lex = PronounLexicon::load(lexicon);
            require_writable_parent(out_path);
            if (common.dry_run) return dry("annotate");
            std::vector<LabeledSentence> labelled;
            std::vector<std::string> warnings;
            for (std::size_t i = 0; i < x.size(); ++i) {
                std::vector<std::string> w;
                labelled.push_back(label_parallel(x[i], y[i], links[i], inv, lex, &w));
                for (const auto& m : w) warnings.push_back("line " + std::to_string(i + 1) + ": " + m);
            }
            for (const auto& w : warnings) err << "warning: " << w << '\n';
            std::vector<Sentence> tokens;
            std::size_t inserted = 0;
            for (const auto& l : labelled) {
                tokens.push_back(l.tokens);
                inserted += l.insertions.size();
            }
            write_corpus(out_path, tokens);
            write_insertion_log(log_path.empty() ? out_path + ".insertions" : log_path, labelled);
            write_settings(out_path + ".config", "annotate", common, s);
            summary("annotate", {{"sentences", std::to_string(x.size())},
                                 {"inserted", std::to_string(inserted)},
                                 {"warnings", std::to_string(warnings.size())}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ train-dp
    {
        Command& c = commands["train-dp"];
        c.app = app.add_subcommand("train-dp", "Train the monolingual dropped-pronoun generator");
        std::string &xhat = text(), &insertions = text(), &inventory = text(), &out_dir = text(), &epochs = text();
        c.app->add_option("--xhat", xhat, "Labelled source corpus")->required();
        c.app->add_option("--insertions", insertions, "Insertion log of --xhat")->required();
        c.app->add_option("--inventory", inventory, "Pronoun inventory")->required();
        c.app->add_option("--out", out_dir, "Model directory")->required();
        c.defaults = DpGeneratorConfig{}.to_kv();
        c.defaults.erase("seed");
        flag(c, c.app->add_option("--epochs", epochs, "Training epochs"), "epochs");
        c.run = [&](const Settings& s) {
            require_file(xhat, "--xhat");
            require_file(insertions, "--insertions");
            require_file(inventory, "--inventory");
            Settings kv = s;
            kv["seed"] = std::to_string(common.seed);
            const DpGeneratorConfig cfg = DpGeneratorConfig::from_kv(kv);
            const auto lines = read_corpus(xhat);
            const auto corpus = labelled_from_log(lines, read_insertion_log(insertions, lines.size()));
            const PronounInventory inv = PronounInventory::load(inventory);
            require_writable_parent(out_dir);
            if (common.dry_run) return dry("train-dp");
            const DpGeneratorModel m = train_dp_generator(corpus, inv.source, cfg);
            m.save(out_dir);
            write_settings(fs::path(out_dir) / "effective.txt", "train-dp", common, s);
            summary("train-dp", {{"sentences", std::to_string(corpus.size())},
                                 {"gap_accuracy", fmt(gap_accuracy(m, corpus), 4)}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ label
    {
        Command& c = commands["label"];
        c.app = app.add_subcommand("label", "Insert dropped pronouns into source sentences with the generator");
        std::string &model = text(), &src = text(), &out_path = text(), &log_path = text(), &threshold = text();
        c.app->add_option("--model", model, "Generator directory")->required();
        c.app->add_option("--src", src, "Source corpus")->required();
        c.app->add_option("--out", out_path, "Labelled output")->required();
        c.app->add_option("--log", log_path, "Insertion log output (default <out>.insertions)");
        c.defaults = {{"threshold", "0.5"}};
        flag(c, c.app->add_option("--threshold", threshold, "Insertion probability threshold"), "threshold");
        c.run = [&](const Settings& s) {
            require_dir(model, "--model");
            require_file(src, "--src");
            const double th = to_double(s, "threshold");
            if (!(th > 0.0 && th < 1.0)) throw DataError("threshold must be in (0, 1)");
            const DpGeneratorModel m = DpGeneratorModel::load(model);
            const auto x = read_corpus(src);
            require_writable_parent(out_path);
            if (common.dry_run) return dry("label");
            std::vector<LabeledSentence> labelled;
            std::vector<Sentence> tokens;
            std::size_t inserted = 0;
            for (const auto& line : x) {
                labelled.push_back(label_monolingual(line, m, th));
                tokens.push_back(labelled.back().tokens);
                inserted += labelled.back().insertions.size();
            }
            write_corpus(out_path, tokens);
            write_insertion_log(log_path.empty() ? out_path + ".insertions" : log_path, labelled);
            write_settings(out_path + ".config", "label", common, s);
            summary("label", {{"sentences", std::to_string(x.size())}, {"inserted", std::to_string(inserted)}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ train
    {
        Command& c = commands["train"];
        c.app = app.add_subcommand("train", "Train a translation model");
        std::string &variant = text("baseline"), &src = text(), &tgt = text(), &xhat = text(), &tune_src = text(), &tune_tgt = text(), &tune_xhat = text(), &out_dir = text(), &init_dir = text(), &epochs = text();
        c.app->add_option("--variant", variant, "baseline, baseline-dps, enc-rec, dec-rec or both")
            ->check(CLI::IsMember({"baseline", "baseline-dps", "enc-rec", "dec-rec", "both"}));
        c.app->add_option("--src", src, "Training source")->required();
        c.app->add_option("--tgt", tgt, "Training target")->required();
        c.app->add_option("--xhat", xhat, "Training source with labelled pronouns");
        c.app->add_option("--tune-src", tune_src, "Tuning source")->required();
        c.app->add_option("--tune-tgt", tune_tgt, "Tuning target")->required();
        c.app->add_option("--tune-xhat", tune_xhat, "Tuning source with labelled pronouns");
        c.app->add_option("--out", out_dir, "Model directory")->required();
        c.app->add_option("--init", init_dir, "Baseline model directory to start from");
        ModelConfig model_defaults;
        model_defaults.embedding_dim = model_defaults.hidden_dim = model_defaults.readout_dim = 32;
        model_defaults.reconstructor_hidden_dim = 32;
        c.defaults = model_defaults.to_kv();
        for (const char* k : {"source_vocab_size", "target_vocab_size", "variant"}) c.defaults.erase(k);
        TrainConfig train_defaults;
        train_defaults.batch_size = 1;
        train_defaults.clip_norm = 5.0;
        for (const auto& [k, v] : train_defaults.to_kv()) c.defaults[k] = v;
        c.defaults.erase("workers");
        c.defaults.erase("shuffle_seed");
        c.defaults["vocab_cap"] = "30000";
        c.defaults["epochs"] = "";
        flag(c, c.app->add_option("--epochs", epochs, "Epochs (default epochs_stage1, or epochs_stage2 with --init)"),
             "epochs");
        c.run = [&, model_defaults, train_defaults](const Settings& s) {
            const bool dps = variant == "baseline-dps";
            const Variant v = dps ? Variant::Baseline : parse_variant(variant);
            const bool needs_xhat = dps || v != Variant::Baseline;
            for (const auto& [p, w] : {std::pair{&src, "--src"}, {&tgt, "--tgt"}, {&tune_src, "--tune-src"},
                                       {&tune_tgt, "--tune-tgt"}, {&xhat, "--xhat"}, {&tune_xhat, "--tune-xhat"}}) {
                require_file(*p, w);
            }
            if (needs_xhat && (xhat.empty() || tune_xhat.empty())) {
                throw DataError("variant " + variant + " needs --xhat and --tune-xhat");
            }
            if (!init_dir.empty()) require_dir(init_dir, "--init");
            const auto x = read_corpus(src), y = read_corpus(tgt), tx = read_corpus(tune_src), ty = read_corpus(tune_tgt);
            check_same_length(x.size(), y.size(), "--src/--tgt");
            check_same_length(tx.size(), ty.size(), "--tune-src/--tune-tgt");
            const auto xh = needs_xhat ? read_corpus(xhat) : x;
            const auto txh = needs_xhat ? read_corpus(tune_xhat) : tx;
            check_same_length(x.size(), xh.size(), "--src/--xhat");
            check_same_length(tx.size(), txh.size(), "--tune-src/--tune-xhat");

            Settings model_kv = subset(s, model_defaults.to_kv());
            ModelConfig mc = ModelConfig::from_kv(model_kv);
            Settings train_kv = subset(s, train_defaults.to_kv());
            train_kv["shuffle_seed"] = std::to_string(common.seed);
            train_kv["workers"] = std::to_string(common.workers);
            const TrainConfig tc = TrainConfig::from_kv(train_kv);
            tc.validate();
            const std::size_t epochs_n = !s.at("epochs").empty() ? to_size(s, "epochs")
                                         : init_dir.empty()      ? tc.epochs_stage1
                                                                 : tc.epochs_stage2;

            Vocabulary sv, tv;
            ParameterSet init;
            mc.variant = v;
            if (!init_dir.empty()) {
                const LoadedModel base = load_model(init_dir, "");
                sv = base.source_vocab;
                tv = base.target_vocab;
                mc.source_vocab_size = sv.size();
                mc.target_vocab_size = tv.size();
                mc.validate();
                init = init_from_baseline(base.params, mc, common.seed);
            } else {
                std::vector<Sentence> src_side = dps ? xh : x;
                if (needs_xhat && !dps) src_side.insert(src_side.end(), xh.begin(), xh.end());
                sv = build_vocab(src_side, to_size(s, "vocab_cap")).vocab;
                tv = build_vocab(y, to_size(s, "vocab_cap")).vocab;
                mc.source_vocab_size = sv.size();
                mc.target_vocab_size = tv.size();
                mc.validate();
                Rng rng(common.seed);
                init = init_parameters(mc, rng);
            }
            require_writable_parent(out_dir);
            if (common.dry_run) return dry("train");

            const auto ex = encode_all(sv, dps ? xh : x), ey = encode_all(tv, y), exh = encode_all(sv, xh);
            const auto etx = encode_all(sv, dps ? txh : tx), ety = encode_all(tv, ty), etxh = encode_all(sv, txh);
            std::vector<Triple> corpus, tune;
            for (std::size_t i = 0; i < ex.size(); ++i) corpus.push_back({ex[i], ey[i], exh[i]});
            for (std::size_t i = 0; i < etx.size(); ++i) tune.push_back({etx[i], ety[i], etxh[i]});

            fs::create_directories(out_dir);
            sv.save(fs::path(out_dir) / "vocab.src");
            tv.save(fs::path(out_dir) / "vocab.tgt");
            {
                std::ofstream m(fs::path(out_dir) / "model.txt");
                for (const auto& [k, val] : mc.to_kv()) m << k << '=' << val << '\n';
            }
            Settings eff = s;
            eff["variant"] = variant;
            eff["epochs"] = std::to_string(epochs_n);
            eff["init"] = init_dir;
            write_settings(fs::path(out_dir) / "config.txt", "train", common, eff);

            TrainHooks hooks;
            hooks.out_dir = fs::path(out_dir);
            hooks.on_epoch = [&](const EpochRecord& r) { note(r.format()); };
            const TrainResult r = train(corpus, tune, mc, tc, std::move(init), epochs_n, hooks);
            summary("train", {{"variant", variant},
                              {"epochs", std::to_string(epochs_n)},
                              {"best_epoch", std::to_string(r.best_epoch)},
                              {"tune_loglik", fmt(r.best_metric)}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ translate / rerank
    auto add_decoder = [&](const std::string& name, bool reranking) {
        Command& c = commands[name];
        c.app = app.add_subcommand(name, reranking ? "Translate k-best lists and rerank them with reconstruction scores"
                                                   : "Translate with beam search");
        struct Opts {
            std::string model, src, xhat, out_path, kbest, checkpoint, beam, lambda_enc, lambda_dec;
        };
        auto o = std::make_shared<Opts>();
        c.app->add_option("--model", o->model, "Model directory")->required();
        c.app->add_option("--src", o->src, "Source corpus")->required();
        c.app->add_option("--out", o->out_path, "1-best output")->required();
        c.app->add_option("--kbest", o->kbest, "Write the scored k-best lists here");
        c.app->add_option("--checkpoint", o->checkpoint, "Checkpoint file (default: the model's best)");
        c.defaults = {{"beam", "10"}};
        flag(c, c.app->add_option("--beam", o->beam, "Beam size"), "beam");
        if (reranking) {
            c.app->add_option("--xhat", o->xhat, "Reconstruction targets (labelled source)")->required();
            c.defaults["lambda_enc"] = "1";
            c.defaults["lambda_dec"] = "1";
            flag(c, c.app->add_option("--lambda-enc", o->lambda_enc, "Encoder-reconstructor weight"), "lambda_enc");
            flag(c, c.app->add_option("--lambda-dec", o->lambda_dec, "Decoder-reconstructor weight"), "lambda_dec");
        }
        c.run = [&, o, name, reranking](const Settings& s) {
            require_dir(o->model, "--model");
            require_file(o->src, "--src");
            require_file(o->checkpoint, "--checkpoint");
            if (reranking) require_file(o->xhat, "--xhat");
            const std::size_t beam = to_size(s, "beam");
            if (beam < 1) throw DataError("beam must be >= 1");
            RerankWeights w;
            if (reranking) {
                w = {to_double(s, "lambda_enc"), to_double(s, "lambda_dec")};
                w.validate();
            }
            const LoadedModel m = load_model(o->model, o->checkpoint);
            const auto x = read_corpus(o->src);
            const auto xh = reranking ? read_corpus(o->xhat) : std::vector<Sentence>{};
            if (reranking) check_same_length(x.size(), xh.size(), "--src/--xhat");
            require_writable_parent(o->out_path);
            if (common.dry_run) return dry(name);
            const auto ex = encode_all(m.source_vocab, x);
            const auto kbest = translate_corpus(m.params, m.config, ex, beam, common.workers);
            std::vector<Sentence> best;
            std::ofstream kb;
            if (!o->kbest.empty()) kb.open(o->kbest);
            for (std::size_t i = 0; i < kbest.size(); ++i) {
                if (reranking) {
                    const RerankResult r = rerank(kbest[i], ex[i], m.source_vocab.encode(xh[i]), m.params, m.config, w);
                    best.push_back(m.target_vocab.decode(r.best().hyp.tokens));
                    if (kb.is_open()) write_kbest(kb, i, r, m.target_vocab);
                } else {
                    best.push_back(m.target_vocab.decode(kbest[i].at(0).tokens));
                    if (kb.is_open()) {
                        RerankResult r;
                        for (std::size_t k = 0; k < kbest[i].size(); ++k) {
                            r.table.push_back({kbest[i][k], std::nullopt, std::nullopt, kbest[i][k].score()});
                            r.order.push_back(k);
                        }
                        write_kbest(kb, i, r, m.target_vocab);
                    }
                }
            }
            write_corpus(o->out_path, best);
            write_settings(o->out_path + ".config", name, common, s);
            summary(name, {{"sentences", std::to_string(x.size())}, {"beam", std::to_string(beam)}});
            return kExitOk;
        };
    };
    add_decoder("translate", false);
    add_decoder("rerank", true);

    // ------------------------------------------------------------ evaluate
    {
        Command& c = commands["evaluate"];
        c.app = app.add_subcommand("evaluate", "BLEU, sign test and dropped-pronoun recall");
        std::string &hyp = text(), &ref = text(), &other = text(), &drops = text();
        c.app->add_option("--hyp", hyp, "System output")->required();
        c.app->add_option("--ref", ref, "Reference translations")->required();
        c.app->add_option("--compare", other, "Second system output for the sign test");
        c.app->add_option("--drops", drops, "Drop log with target indices, for dropped-pronoun recall");
        c.run = [&](const Settings&) {
            require_file(hyp, "--hyp");
            require_file(ref, "--ref");
            require_file(other, "--compare");
            require_file(drops, "--drops");
            const auto h = read_corpus(hyp), r = read_corpus(ref);
            check_same_length(h.size(), r.size(), "--hyp/--ref");
            if (common.dry_run) return dry("evaluate");
            const BleuResult b = bleu(h, r);
            out << b.format() << '\n';
            std::vector<std::pair<std::string, std::string>> fields = {{"bleu", fmt(b.score, 2)}};
            if (!other.empty()) {
                const auto o = read_corpus(other);
                const SignTestResult st = sign_test(h, o, r);
                const BleuResult ob = bleu(o, r);
                out << "compare " << ob.format() << '\n';
                out << "sign test: wins=" << st.wins << " losses=" << st.losses << " ties=" << st.ties
                    << " p=" << fmt(st.p_value, 6) << (st.all_ties ? " (all ties)" : "") << '\n';
                fields.push_back({"compare_bleu", fmt(ob.score, 2)});
                fields.push_back({"p_value", fmt(st.p_value, 6)});
            }
            if (!drops.empty()) {
                const DpRecall d = dp_token_recall(h, r, read_insertion_log(drops, r.size()));
                out << "dropped-pronoun recall: " << d.matched << "/" << d.dropped << " = " << fmt(100.0 * d.recall(), 2)
                    << '\n';
                fields.push_back({"dp_recall", fmt(100.0 * d.recall(), 2)});
            }
            summary("evaluate", fields);
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ stats
    {
        Command& c = commands["stats"];
        c.app = app.add_subcommand("stats", "Corpus statistics and dropped-pronoun rate");
        std::string &src = text(), &tgt = text(), &insertions = text(), &inventory = text(), &out_path = text();
        c.app->add_option("--src", src, "Source corpus (pronouns dropped)")->required();
        c.app->add_option("--tgt", tgt, "Target corpus")->required();
        c.app->add_option("--insertions", insertions, "Insertion or drop log")->required();
        c.app->add_option("--inventory", inventory, "Pronoun inventory")->required();
        c.app->add_option("--out", out_path, "Also write the key=value records here");
        c.run = [&](const Settings& s) {
            for (const auto& [p, w] : {std::pair{&src, "--src"}, {&tgt, "--tgt"}, {&insertions, "--insertions"},
                                       {&inventory, "--inventory"}}) {
                require_file(*p, w);
            }
            const auto x = read_corpus(src), y = read_corpus(tgt);
            check_same_length(x.size(), y.size(), "--src/--tgt");
            const auto log = read_insertion_log(insertions, x.size());
            const PronounInventory inv = PronounInventory::load(inventory);
            if (!out_path.empty()) require_writable_parent(out_path);
            if (common.dry_run) return dry("stats");
            const CorpusStats st = dp_rate_stats(x, y, log, inv);
            out << st.table() << st.records();
            if (!out_path.empty()) {
                std::ofstream(out_path) << st.records();
                write_settings(out_path + ".config", "stats", common, s);
            }
            summary("stats", {{"dp_rate", fmt(st.dp_rate)}, {"no_target_pronouns", st.no_target_pronouns ? "1" : "0"}});
            return kExitOk;
        };
    }

    // ------------------------------------------------------------ gradcheck
    {
        Command& c = commands["gradcheck"];
        c.app = app.add_subcommand("gradcheck", "Finite-difference gradient check of a small random model");
        std::string &variant = text("both"), &vocab = text(), &dim = text(), &eps = text();
        c.app->add_option("--variant", variant, "baseline, enc-rec, dec-rec or both")
            ->check(CLI::IsMember({"baseline", "enc-rec", "dec-rec", "both"}));
        c.defaults = {{"vocab", "20"}, {"dim", "8"}, {"epsilon", "1e-4"}, {"tolerance", "1e-4"}};
        flag(c, c.app->add_option("--vocab", vocab, "Vocabulary size"), "vocab");
        flag(c, c.app->add_option("--dim", dim, "Embedding and hidden size"), "dim");
        flag(c, c.app->add_option("--epsilon", eps, "Finite-difference step"), "epsilon");
        c.run = [&](const Settings& s) {
            ModelConfig mc;
            mc.source_vocab_size = mc.target_vocab_size = to_size(s, "vocab");
            mc.embedding_dim = mc.hidden_dim = mc.readout_dim = mc.reconstructor_hidden_dim = to_size(s, "dim");
            mc.variant = parse_variant(variant);
            mc.init_range = 0.5;
            mc.validate();
            if (mc.source_vocab_size < 6) throw DataError("vocab must be >= 6");
            if (common.dry_run) return dry("gradcheck");
            Rng rng(common.seed);
            ParameterSet p = init_parameters(mc, rng);
            Graph g;
            Network net(g, p, mc);
            // Fixed token ids, folded into the vocabulary so any size >= 6 works.
            auto ids = [&](std::vector<int> v) {
                const int open = static_cast<int>(mc.source_vocab_size - Vocabulary::kReservedCount);
                for (auto& t : v) t = Vocabulary::kReservedCount + (t - Vocabulary::kReservedCount) % open;
                v.push_back(Vocabulary::kEos);
                return v;
            };
            const LossTerms terms = net.joint_loss(PaddedBatch::make({ids({4, 9, 7}), ids({12})}),
                                                   PaddedBatch::make({ids({5, 12}), ids({8, 19, 6})}),
                                                   PaddedBatch::make({ids({6, 4, 9, 7}), ids({10, 12})}));
            const GradCheckResult r = finite_diff_check(g, terms.total, p, to_double(s, "epsilon"));
            const bool pass = r.max_relative_error < to_double(s, "tolerance");
            out << "max relative error " << r.max_relative_error << " at " << r.worst_param << "[" << r.worst_index
                << "] (analytic " << r.worst_analytic << ", numeric " << r.worst_numeric << ") over "
                << r.entries_checked << " entries\n";
            summary("gradcheck", {{"variant", variant},
                                  {"max_relative_error", fmt(r.max_relative_error, 10)},
                                  {"pass", pass ? "1" : "0"}});
            return pass ? kExitOk : kExitFailure;
        };
    }

    // ------------------------------------------------------------ experiment
    {
        Command& c = commands["experiment"];
        c.app = app.add_subcommand("experiment", "Run the synthetic end-to-end comparison of every system");
        std::string& out_dir = text();
        c.app->add_option("--out", out_dir, "Output directory")->required();
        c.defaults = ExperimentConfig{}.to_kv();
        c.defaults.erase("seed");
        c.defaults.erase("workers");
        c.run = [&](const Settings& s) {
            Settings kv = s;
            kv["seed"] = std::to_string(common.seed);
            kv["workers"] = std::to_string(common.workers);
            const ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
            require_writable_parent(out_dir);
            if (common.dry_run) return dry("experiment");
            const ExperimentReport r = run_experiment(cfg, out_dir, [&](const std::string& line) { note(line); });
            out << r.records();
            const SystemScore& both = r.system("both");
            summary("experiment", {{"baseline_bleu", fmt(r.system("baseline").bleu, 2)}, {"both_bleu", fmt(both.bleu, 2)}});
            return kExitOk;
        };
    }

    std::vector<std::string> argv_storage = {"dpnmt"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "dpnmt: " << e.what() << "\n\n";
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands()) sub = s;
        err << (sub ? sub->help() : app.help());
        return kExitUsage;
    }
    for (auto& [name, c] : commands) {
        if (c.app->parsed()) active = name;
    }
    Command& cmd = commands.at(active);
    try {
        return cmd.run(effective(cmd));
    } catch (const NumericError& e) {
        err << "dpnmt " << active << ": numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        err << "dpnmt " << active << ": " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "dpnmt " << active << ": " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace dpnmt
