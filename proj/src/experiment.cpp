#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpnmt/decoding.hpp"
#include "dpnmt/error.hpp"
#include "dpnmt/experiment.hpp"
#include "dpnmt/rng.hpp"

namespace dpnmt {

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (double d : v) out += (out.empty() ? "" : ",") + num(d);
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    std::istringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

struct Split {
    std::vector<Sentence> x, y, x_hat;
    std::vector<Alignment> gold;
    std::vector<std::vector<Insertion>> drops;

    void add(const SynthPair& p) {
        x.push_back(p.source);
        y.push_back(p.target);
        x_hat.push_back(p.labelled);
        gold.push_back(p.alignment);
        drops.push_back(p.drops);
    }
    std::vector<LabeledSentence> gold_labels() const {
        std::vector<LabeledSentence> out;
        for (std::size_t i = 0; i < x.size(); ++i) out.push_back(apply_insertions(x[i], drops[i]));
        return out;
    }
};

std::vector<Sentence> tokens_of(const std::vector<LabeledSentence>& l) {
    std::vector<Sentence> out;
    for (const auto& s : l) out.push_back(s.tokens);
    return out;
}

std::vector<std::vector<int>> encode_all(const Vocabulary& v, const std::vector<Sentence>& s) {
    std::vector<std::vector<int>> out;
    for (const auto& line : s) out.push_back(v.encode(line));
    return out;
}

std::vector<Triple> triples(const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt,
                            const std::vector<std::vector<int>>& lab) {
    std::vector<Triple> out;
    for (std::size_t i = 0; i < src.size(); ++i) out.push_back({src[i], tgt[i], lab[i]});
    return out;
}

Sentence words_of(const Vocabulary& v, const std::vector<int>& ids) {
    Sentence out;
    for (int id : ids) {
        if (id == Vocabulary::kEos) break;
        out.push_back(v.token(id));
    }
    return out;
}

// Rerank inputs per sentence: normalized likelihoods and dec-rec scores.
struct Candidates {
    std::vector<std::vector<Sentence>> words;
    std::vector<std::vector<double>> likelihood;
    std::vector<std::vector<double>> dec;
};

Candidates score_candidates(const std::vector<std::vector<Hypothesis>>& kbest,
                            const std::vector<std::vector<int>>& x, const std::vector<std::vector<int>>& x_hat,
                            const ParameterSet& params, const ModelConfig& cfg, const Vocabulary& tv) {
    Candidates c;
    for (std::size_t i = 0; i < kbest.size(); ++i) {
        const RerankResult r = rerank(kbest[i], x[i], x_hat[i], params, cfg, {0.0, 0.0});
        std::vector<Sentence> w;
        std::vector<double> ll, dec;
        for (const auto& cand : r.table) {
            w.push_back(words_of(tv, cand.hyp.tokens));
            ll.push_back(cand.hyp.score());
            dec.push_back(cand.dec_rec ? *cand.dec_rec / static_cast<double>(x_hat[i].size()) : 0.0);
        }
        c.words.push_back(std::move(w));
        c.likelihood.push_back(std::move(ll));
        c.dec.push_back(std::move(dec));
    }
    return c;
}

std::vector<Sentence> pick(const Candidates& c, double lambda_dec) {
    std::vector<Sentence> out;
    for (std::size_t i = 0; i < c.words.size(); ++i) {
        const auto order = combine_scores(c.likelihood[i], {}, c.dec[i], {0.0, lambda_dec});
        out.push_back(c.words[i][order[0]]);
    }
    return out;
}

void write_lines(const std::filesystem::path& p, const std::vector<Sentence>& lines) { write_corpus(p, lines); }

}  // namespace

std::map<std::string, std::string> ExperimentConfig::to_kv() const {
    std::map<std::string, std::string> kv = {
        {"seed", std::to_string(seed)},
        {"train_size", std::to_string(train_size)},
        {"tune_size", std::to_string(tune_size)},
        {"test_size", std::to_string(test_size)},
        {"drop_rate", num(drop_rate)},
        {"em_iterations", std::to_string(em_iterations)},
        {"dim", std::to_string(dim)},
        {"init_range", num(init_range)},
        {"batch_size", std::to_string(batch_size)},
        {"epochs_stage1", std::to_string(epochs_stage1)},
        {"epochs_stage2", std::to_string(epochs_stage2)},
        {"clip_norm", num(clip_norm)},
        {"beam_size", std::to_string(beam_size)},
        {"lambda_grid", join_doubles(lambda_grid)},
        {"threshold_grid", join_doubles(threshold_grid)},
        {"workers", std::to_string(workers)},
    };
    for (const auto& [k, v] : generator.to_kv()) kv["generator." + k] = v;
    return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ExperimentConfig c;
    std::map<std::string, std::string> gen;
    for (const auto& [k, v] : kv) {
        try {
            if (k.rfind("generator.", 0) == 0) {
                gen[k.substr(10)] = v;
            } else if (k == "seed") {
                c.seed = std::stoull(v);
            } else if (k == "train_size") {
                c.train_size = std::stoul(v);
            } else if (k == "tune_size") {
                c.tune_size = std::stoul(v);
            } else if (k == "test_size") {
                c.test_size = std::stoul(v);
            } else if (k == "drop_rate") {
                c.drop_rate = std::stod(v);
            } else if (k == "em_iterations") {
                c.em_iterations = std::stoul(v);
            } else if (k == "dim") {
                c.dim = std::stoul(v);
            } else if (k == "init_range") {
                c.init_range = std::stod(v);
            } else if (k == "batch_size") {
                c.batch_size = std::stoul(v);
            } else if (k == "epochs_stage1") {
                c.epochs_stage1 = std::stoul(v);
            } else if (k == "epochs_stage2") {
                c.epochs_stage2 = std::stoul(v);
            } else if (k == "clip_norm") {
                c.clip_norm = std::stod(v);
            } else if (k == "beam_size") {
                c.beam_size = std::stoul(v);
            } else if (k == "lambda_grid") {
                c.lambda_grid = split_doubles(v);
            } else if (k == "threshold_grid") {
                c.threshold_grid = split_doubles(v);
            } else if (k == "workers") {
                c.workers = std::stoul(v);
            } else {
                throw DataError("unknown experiment setting '" + k + "'");
            }
        } catch (const std::logic_error&) {
            throw DataError("bad value '" + v + "' for experiment setting '" + k + "'");
        }
    }
    c.generator = DpGeneratorConfig::from_kv(gen);
    return c;
}

const SystemScore& ExperimentReport::system(const std::string& name) const {
    for (const auto& s : systems) {
        if (s.name == name) return s;
    }
    throw DataError("no system '" + name + "' in the report");
}

std::string ExperimentReport::records() const {
    std::ostringstream out;
    out << train_stats.records();
    auto f1 = [&](const char* name, const LabellingScore& s) {
        out << "annotation." << name << ".precision=" << fixed(s.precision, 6) << '\n'
            << "annotation." << name << ".recall=" << fixed(s.recall, 6) << '\n'
            << "annotation." << name << ".f1=" << fixed(s.f1, 6) << '\n';
    };
    f1("gold_alignment", gold_alignment);
    f1("em_alignment", em_alignment);
    f1("monolingual", monolingual);
    out << "annotation.threshold=" << fixed(threshold, 2) << '\n';
    for (const auto& s : systems) {
        const std::string p = "system." + s.name + ".";
        out << p << "bleu=" << fixed(s.bleu, 2) << '\n'
            << p << "bleu_likelihood=" << fixed(s.bleu_likelihood, 2) << '\n'
            << p << "dp_recall=" << fixed(100.0 * s.dp_recall, 2) << '\n'
            << p << "dp_recall_likelihood=" << fixed(100.0 * s.dp_recall_likelihood, 2) << '\n'
            << p << "lambda_dec=" << fixed(s.lambda_dec, 2) << '\n'
            << p << "best_epoch=" << s.best_epoch << '\n';
    }
    return out.str();
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const std::function<void(const std::string&)>& log) {
    const auto start = std::chrono::steady_clock::now();
    auto say = [&](const std::string& msg) {
        if (!log) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log("[" + fixed(s, 1) + "s] " + msg);
    };
    if (cfg.train_size == 0 || cfg.tune_size == 0 || cfg.test_size == 0) {
        throw DataError("experiment: split sizes must be > 0");
    }
    const auto data = out_dir / "data";
    const auto models = out_dir / "models";
    const auto outputs = out_dir / "translations";
    for (const auto& d : {data, models, outputs}) std::filesystem::create_directories(d);
    {
        std::ofstream cfg_out(out_dir / "config.txt");
        for (const auto& [k, v] : cfg.to_kv()) cfg_out << k << '=' << v << '\n';
    }

    // Data.
    const SynthGrammar grammar = SynthGrammar::standard(cfg.drop_rate, cfg.seed);
    const PronounInventory inventory = grammar.inventory();
    const auto pairs = synth_corpus(grammar, cfg.train_size + cfg.tune_size + cfg.test_size);
    Split train_split, tune_split, test_split;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        (i < cfg.train_size ? train_split : i < cfg.train_size + cfg.tune_size ? tune_split : test_split).add(pairs[i]);
    }
    for (const auto& [name, s] : {std::pair{"train", &train_split}, std::pair{"tune", &tune_split}, std::pair{"test", &test_split}}) {
        write_lines(data / (std::string(name) + ".src"), s->x);
        write_lines(data / (std::string(name) + ".tgt"), s->y);
        write_lines(data / (std::string(name) + ".xhat.gold"), s->x_hat);
        write_alignments(data / (std::string(name) + ".align.gold"), s->gold);
        write_insertion_log(data / (std::string(name) + ".drops"), s->gold_labels());
    }
    const Split& train = train_split;
    const Split& tune = tune_split;
    const Split& test = test_split;
    ExperimentReport report;
    report.train_stats = dp_rate_stats(train.x, train.y, train.drops, inventory);
    say("synthesized " + std::to_string(pairs.size()) + " pairs");

    // Alignment over all pairs (unsupervised), lexicon and projection.
    std::vector<Sentence> all_x, all_y;
    for (const auto* s : {&train, &tune, &test}) {
        all_x.insert(all_x.end(), s->x.begin(), s->x.end());
        all_y.insert(all_y.end(), s->y.begin(), s->y.end());
    }
    const AlignResult aligned = em_align(all_x, all_y, cfg.em_iterations);
    const PronounLexicon lexicon = PronounLexicon::from_table(aligned.source_given_target, inventory);
    lexicon.save(data / "lexicon.tsv");
    auto project = [&](const Split& s, std::size_t offset, bool gold) {
        std::vector<LabeledSentence> out;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out.push_back(label_parallel(s.x[i], s.y[i], gold ? s.gold[i] : aligned.links[offset + i], inventory,
                                         lexicon));
        }
        return out;
    };
    const auto train_em = project(train, 0, false);
    const auto tune_em = project(tune, cfg.train_size, false);
    const auto test_em = project(test, cfg.train_size + cfg.tune_size, false);
    const auto test_gold_projected = project(test, 0, true);
    write_lines(data / "train.xhat", tokens_of(train_em));
    write_insertion_log(data / "train.insertions", train_em);
    report.gold_alignment = labelling_f1(test_gold_projected, test.gold_labels());
    report.em_alignment = labelling_f1(test_em, test.gold_labels());
    say("aligned; EM-projection F1 on test " + fixed(report.em_alignment.f1, 4));

    // Monolingual DP generator; threshold tuned against the tuning projection.
    DpGeneratorConfig gen_cfg = cfg.generator;
    gen_cfg.seed = cfg.seed;
    const DpGeneratorModel generator = train_dp_generator(train_em, inventory.source, gen_cfg);
    generator.save(models / "dp-generator");
    auto label_all = [&](const Split& s, double threshold) {
        std::vector<LabeledSentence> out;
        for (const auto& x : s.x) out.push_back(label_monolingual(x, generator, threshold));
        return out;
    };
    double best_f1 = -1.0;
    for (double th : cfg.threshold_grid) {
        const double f1 = labelling_f1(label_all(tune, th), tune_em).f1;
        if (f1 > best_f1) {
            best_f1 = f1;
            report.threshold = th;
        }
    }
    const auto tune_mono = label_all(tune, report.threshold);
    const auto test_mono = label_all(test, report.threshold);
    write_lines(data / "tune.xhat.mono", tokens_of(tune_mono));
    write_lines(data / "test.xhat.mono", tokens_of(test_mono));
    report.monolingual = labelling_f1(test_mono, test.gold_labels());
    say("DP generator threshold " + fixed(report.threshold, 2) + ", monolingual F1 on test " +
        fixed(report.monolingual.f1, 4));

    // Vocabularies and id corpora.
    std::vector<Sentence> src_side = train.x;
    for (const auto& s : train_em) src_side.push_back(s.tokens);
    const Vocabulary sv = build_vocab(src_side, 30000).vocab;
    const Vocabulary tv = build_vocab(train.y, 30000).vocab;
    sv.save(data / "vocab.src");
    tv.save(data / "vocab.tgt");
    const auto tr_x = encode_all(sv, train.x), tr_y = encode_all(tv, train.y),
               tr_xh = encode_all(sv, tokens_of(train_em));
    const auto tu_x = encode_all(sv, tune.x), tu_y = encode_all(tv, tune.y),
               tu_xh = encode_all(sv, tokens_of(tune_em)), tu_mono = encode_all(sv, tokens_of(tune_mono));
    const auto te_x = encode_all(sv, test.x), te_mono = encode_all(sv, tokens_of(test_mono));

    ModelConfig base_model;
    base_model.source_vocab_size = sv.size();
    base_model.target_vocab_size = tv.size();
    base_model.embedding_dim = base_model.hidden_dim = base_model.readout_dim = cfg.dim;
    base_model.reconstructor_hidden_dim = cfg.dim;
    base_model.init_range = cfg.init_range;
    TrainConfig tc;
    tc.batch_size = cfg.batch_size;
    tc.clip_norm = cfg.clip_norm;
    tc.shuffle_seed = cfg.seed;
    tc.workers = cfg.workers;
    tc.epochs_stage1 = cfg.epochs_stage1;
    tc.epochs_stage2 = cfg.epochs_stage2;

    auto train_system = [&](const std::string& name, const ModelConfig& m, const std::vector<Triple>& corpus,
                            const std::vector<Triple>& tune_set, ParameterSet init, std::size_t epochs) {
        TrainHooks hooks;
        hooks.out_dir = models / name;
        hooks.on_epoch = [&](const EpochRecord& r) { say(name + " " + r.format()); };
        {
            std::filesystem::create_directories(models / name);
            std::ofstream mc(models / name / "model.txt");
            for (const auto& [k, v] : m.to_kv()) mc << k << '=' << v << '\n';
        }
        return dpnmt::train(corpus, tune_set, m, tc, std::move(init), epochs, hooks);
    };

    auto decode = [&](const std::string& name, const ParameterSet& params, const ModelConfig& m,
                      const std::vector<std::vector<int>>& src) {
        const auto kbest = translate_corpus(params, m, src, cfg.beam_size, cfg.workers);
        std::vector<Sentence> out;
        for (const auto& k : kbest) out.push_back(words_of(tv, k.at(0).tokens));
        say(name + " decoded " + std::to_string(src.size()) + " sentences");
        return std::pair{kbest, out};
    };

    auto score = [&](SystemScore& s, const std::vector<Sentence>& final_out, const std::vector<Sentence>& ll_out) {
        s.bleu = bleu(final_out, test.y).score;
        s.bleu_likelihood = bleu(ll_out, test.y).score;
        s.dp_recall = dp_token_recall(final_out, test.y, test.drops).recall();
        s.dp_recall_likelihood = dp_token_recall(ll_out, test.y, test.drops).recall();
        write_lines(outputs / (s.name + ".txt"), final_out);
        write_lines(outputs / (s.name + ".likelihood.txt"), ll_out);
        say(s.name + " test BLEU " + fixed(s.bleu, 2) + " (likelihood-only " + fixed(s.bleu_likelihood, 2) +
            "), DP recall " + fixed(100.0 * s.dp_recall, 2));
    };

    // Baselines.
    Rng init_rng(cfg.seed);
    const ParameterSet init = init_parameters(base_model, init_rng);
    const TrainResult baseline = train_system("baseline", base_model, triples(tr_x, tr_y, tr_x),
                                              triples(tu_x, tu_y, tu_x), init, cfg.epochs_stage1);
    {
        SystemScore s{"baseline"};
        s.best_epoch = baseline.best_epoch;
        const auto out = decode("baseline", baseline.best, base_model, te_x).second;
        score(s, out, out);
        report.systems.push_back(s);
    }
    {
        const TrainResult dps = train_system("baseline-dps", base_model, triples(tr_xh, tr_y, tr_xh),
                                             triples(tu_mono, tu_y, tu_mono), init, cfg.epochs_stage1);
        SystemScore s{"baseline-dps"};
        s.best_epoch = dps.best_epoch;
        const auto out = decode("baseline-dps", dps.best, base_model, te_mono).second;
        score(s, out, out);
        report.systems.push_back(s);
    }

    // Reconstructor systems, initialized from the baseline.
    struct RecSystem {
        std::string name;
        Variant variant;
        bool labelled_target;
    };
    const std::vector<RecSystem> rec_systems = {{"enc-rec", Variant::EncRec, true},
                                                {"dec-rec", Variant::DecRec, true},
                                                {"both", Variant::Both, true},
                                                {"both-xrec", Variant::Both, false}};
    for (const auto& rs : rec_systems) {
        ModelConfig m = base_model;
        m.variant = rs.variant;
        const auto& train_lab = rs.labelled_target ? tr_xh : tr_x;
        const auto& tune_lab = rs.labelled_target ? tu_xh : tu_x;
        const TrainResult r = train_system(rs.name, m, triples(tr_x, tr_y, train_lab), triples(tu_x, tu_y, tune_lab),
                                           init_from_baseline(baseline.best, m, cfg.seed), cfg.epochs_stage2);
        SystemScore s{rs.name};
        s.best_epoch = r.best_epoch;
        // Test-time reconstruction target: the generator's labelling, or x
        // itself for the x-target ablation.
        const auto& tune_target = rs.labelled_target ? tu_mono : tu_x;
        const auto& test_target = rs.labelled_target ? te_mono : te_x;
        const auto [tune_kbest, tune_ll] = decode(rs.name + " (tune)", r.best, m, tu_x);
        const auto [test_kbest, test_ll] = decode(rs.name, r.best, m, te_x);
        if (rs.variant == Variant::EncRec) {
            // Encoder-side scores are shared by all candidates of a sentence.
            score(s, test_ll, test_ll);
        } else {
            const Candidates tune_c = score_candidates(tune_kbest, tu_x, tune_target, r.best, m, tv);
            double best_bleu = -1.0;
            for (double lambda : cfg.lambda_grid) {
                const double b = bleu(pick(tune_c, lambda), tune.y).score;
                if (b > best_bleu) {
                    best_bleu = b;
                    s.lambda_dec = lambda;
                }
            }
            const Candidates test_c = score_candidates(test_kbest, te_x, test_target, r.best, m, tv);
            score(s, pick(test_c, s.lambda_dec), test_ll);
            std::ofstream kb(outputs / (rs.name + ".kbest.tsv"));
            for (std::size_t i = 0; i < test_kbest.size(); ++i) {
                write_kbest(kb, i, rerank(test_kbest[i], te_x[i], test_target[i], r.best, m,
                                          {rs.variant == Variant::DecRec ? 0.0 : 1.0, s.lambda_dec}),
                            tv);
            }
        }
        report.systems.push_back(s);
    }

    std::ofstream(out_dir / "report.txt") << report.records();
    say("done");
    return report;
}

}  // namespace dpnmt
