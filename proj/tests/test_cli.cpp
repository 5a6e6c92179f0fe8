#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dpnmt/cli.hpp"

using namespace dpnmt;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dpnmt_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string setting(const std::string& log_line, const std::string& key) {
    std::istringstream in(log_line);
    for (std::string field; in >> field;) {
        if (field.rfind(key + "=", 0) == 0) return field.substr(key.size() + 1);
    }
    return {};
}

std::vector<std::string> lines(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("exit codes") {
    CHECK(run({}).code == kExitUsage);
    const Run help = run({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("annotate") != std::string::npos);
    CHECK(run({"translate", "--help"}).code == kExitOk);
    CHECK(run({"no-such-command"}).code == kExitUsage);
    CHECK(run({"evaluate", "--hyp", "a"}).code == kExitUsage);
    CHECK(run({"evaluate", "--bogus", "1"}).code == kExitUsage);

    const Run missing = run({"evaluate", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"});
    CHECK(missing.code == kExitData);
    CHECK(missing.err.find("/nonexistent/h") != std::string::npos);

    const fs::path dir = temp_dir("codes");
    write(dir / "a.txt", "x y\n");
    write(dir / "b.txt", "x y\nz\n");
    CHECK(run({"evaluate", "--hyp", (dir / "a.txt").string(), "--ref", (dir / "b.txt").string()}).code == kExitData);
    CHECK(run({"--set", "no_such_key=1", "synth", "--out", (dir / "s").string()}).code == kExitData);
    CHECK(run({"--set", "drop_rate=2", "synth", "--out", (dir / "s").string()}).code == kExitData);
    CHECK(run({"--config", (dir / "missing.cfg").string(), "synth", "--out", (dir / "s").string()}).code == kExitData);
    CHECK(run({"--set", "threshold=1.5", "label", "--model", dir.string(), "--src", (dir / "a.txt").string(), "--out",
               (dir / "o").string()})
              .code == kExitData);
}

TEST_CASE("evaluate prints BLEU 100 for a reference against itself") {
    const fs::path dir = temp_dir("evaluate");
    write(dir / "ref.txt", "the cat sat on the mat\nIt is not that bad\n");
    write(dir / "hyp.txt", "The cat sat on the mat\nit is not that bad\n");
    const Run r = run({"evaluate", "--hyp", (dir / "hyp.txt").string(), "--ref", (dir / "ref.txt").string()});
    CHECK(r.code == kExitOk);
    CHECK(r.out.rfind("BLEU = 100.00 ", 0) == 0);
    CHECK(r.out.find("dpnmt evaluate status=ok bleu=100.00") != std::string::npos);

    const Run cmp = run({"evaluate", "--hyp", (dir / "hyp.txt").string(), "--ref", (dir / "ref.txt").string(),
                         "--compare", (dir / "hyp.txt").string()});
    CHECK(cmp.code == kExitOk);
    CHECK(cmp.out.find("(all ties)") != std::string::npos);
}

TEST_CASE("annotate restores the dropped subject of the worked example") {
    const fs::path dir = temp_dir("annotate");
    write(dir / "x.txt", "根本 没 那么 严重\n");
    write(dir / "y.txt", "It is not that bad\n");
    write(dir / "a.txt", "1-2 2-3 3-4\n");
    write(dir / "inv.txt", "source = 我 你 他 她 它 我们\ntarget = i you he she it we\n");
    write(dir / "lex.tsv", "it\t它\t0.9\nit\t他\t0.1\n");
    const Run r = run({"annotate", "--src", (dir / "x.txt").string(), "--tgt", (dir / "y.txt").string(), "--align",
                       (dir / "a.txt").string(), "--inventory", (dir / "inv.txt").string(), "--lexicon",
                       (dir / "lex.tsv").string(), "--out", (dir / "xhat.txt").string()});
    REQUIRE(r.code == kExitOk);
    CHECK(slurp(dir / "xhat.txt") == "它 根本 没 那么 严重\n");
    CHECK(slurp(dir / "xhat.txt.insertions") == "0\t0\t它\t0\n");
    CHECK(fs::exists(dir / "xhat.txt.config"));
    CHECK(r.out.find("inserted=1") != std::string::npos);
}

TEST_CASE("dry run validates and writes nothing") {
    const fs::path dir = temp_dir("dry");
    const Run r = run({"--dry-run", "synth", "--out", (dir / "corpus").string(), "--train", "20"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("dry_run=1") != std::string::npos);
    CHECK(!fs::exists(dir / "corpus"));
    CHECK(fs::is_empty(dir));
    // Validation still happens.
    CHECK(run({"--dry-run", "--set", "drop_rate=-1", "synth", "--out", (dir / "corpus").string()}).code == kExitData);
}

TEST_CASE("settings precedence: defaults, config file, --set, flags") {
    const fs::path dir = temp_dir("precedence");
    write(dir / "run.cfg", "# no drops\ndrop_rate = 0\ntrain_size = 30\n");
    const std::string cfg = (dir / "run.cfg").string();
    auto sizes = {"--tune", "5", "--test", "5"};

    std::vector<std::string> a = {"--config", cfg, "synth", "--out", (dir / "a").string()};
    a.insert(a.end(), sizes.begin(), sizes.end());
    REQUIRE(run(a).code == kExitOk);
    CHECK(lines(dir / "a" / "train.src").size() == 30);
    CHECK(slurp(dir / "a" / "train.drops").find_first_not_of('\n') == std::string::npos);
    CHECK(slurp(dir / "a" / "config.txt").find("drop_rate=0\n") != std::string::npos);

    std::vector<std::string> b = {"--config", cfg, "--set", "drop_rate=1", "synth", "--out", (dir / "b").string()};
    b.insert(b.end(), sizes.begin(), sizes.end());
    REQUIRE(run(b).code == kExitOk);
    CHECK(slurp(dir / "b" / "train.src") != slurp(dir / "b" / "train.xhat"));

    std::vector<std::string> c = {"--config", cfg, "--set", "drop_rate=1", "synth", "--out", (dir / "c").string(),
                                  "--drop-rate", "0", "--train", "12"};
    c.insert(c.end(), sizes.begin(), sizes.end());
    REQUIRE(run(c).code == kExitOk);
    CHECK(lines(dir / "c" / "train.src").size() == 12);
    CHECK(slurp(dir / "c" / "train.src") == slurp(dir / "c" / "train.xhat"));
}

TEST_CASE("synth, align and stats are deterministic for a seed") {
    const fs::path dir = temp_dir("determinism");
    for (const char* name : {"a", "b"}) {
        const fs::path out = dir / name;
        REQUIRE(run({"--seed", "7", "synth", "--out", out.string(), "--train", "200", "--tune", "10", "--test", "10"})
                    .code == kExitOk);
        REQUIRE(run({"align", "--src", (out / "train.src").string(), "--tgt", (out / "train.tgt").string(), "--out",
                     (out / "train.em").string(), "--inventory", (out / "inventory.txt").string(), "--lexicon",
                     (out / "lexicon.tsv").string(), "--iterations", "5"})
                    .code == kExitOk);
    }
    for (const char* f : {"train.src", "train.tgt", "train.xhat", "train.drops", "train.align", "train.em", "lexicon.tsv"}) {
        CAPTURE(f);
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    REQUIRE(run({"--seed", "8", "synth", "--out", (dir / "c").string(), "--train", "200", "--tune", "10", "--test", "10"})
                .code == kExitOk);
    CHECK(slurp(dir / "a" / "train.src") != slurp(dir / "c" / "train.src"));

    const fs::path a = dir / "a";
    const Run st = run({"stats", "--src", (a / "train.src").string(), "--tgt", (a / "train.tgt").string(),
                        "--insertions", (a / "train.drops").string(), "--inventory", (a / "inventory.txt").string()});
    REQUIRE(st.code == kExitOk);
    CHECK(st.out.find("source.sentences=200") != std::string::npos);
}

TEST_CASE("pipeline: generator, baseline, warm-started reconstructor model, decoding") {
    const fs::path dir = temp_dir("pipeline");
    const fs::path d = dir / "data";
    REQUIRE(run({"synth", "--out", d.string(), "--train", "120", "--tune", "12", "--test", "12"}).code == kExitOk);
    auto f = [&](const char* name) { return (d / name).string(); };

    REQUIRE(run({"--set", "embedding_dim=8", "--set", "hidden_dim=8", "--set", "feature_dim=8", "train-dp", "--xhat",
                 f("train.xhat"), "--insertions", f("train.drops"), "--inventory", f("inventory.txt"), "--out",
                 (dir / "dpg").string(), "--epochs", "1"})
                .code == kExitOk);
    const Run lab = run({"label", "--model", (dir / "dpg").string(), "--src", f("test.src"), "--out",
                         (dir / "test.mono").string(), "--threshold", "0.3"});
    REQUIRE(lab.code == kExitOk);
    CHECK(lines(dir / "test.mono").size() == 12);

    const std::vector<std::string> small = {"--set", "embedding_dim=8", "--set", "hidden_dim=8", "--set",
                                            "readout_dim=8", "--set", "reconstructor_hidden_dim=8"};
    std::vector<std::string> base = small;
    for (const std::string& a : std::vector<std::string>{"train", "--src", f("train.src"), "--tgt", f("train.tgt"), "--tune-src", f("tune.src"),
                                 "--tune-tgt", f("tune.tgt"), "--out", (dir / "base").string(), "--epochs", "1"}) {
        base.push_back(a);
    }
    const Run b = run(base);
    REQUIRE(b.code == kExitOk);
    for (const char* file : {"model.txt", "vocab.src", "vocab.tgt", "best", "epoch-0.ckpt", "epoch-1.ckpt", "config.txt"}) {
        CAPTURE(file);
        CHECK(fs::exists(dir / "base" / file));
    }

    std::vector<std::string> both = small;
    for (const std::string& a : std::vector<std::string>{"train", "--variant", "both", "--src", f("train.src"), "--tgt", f("train.tgt"),
                                 "--xhat", f("train.xhat"), "--tune-src", f("tune.src"), "--tune-tgt", f("tune.tgt"),
                                 "--tune-xhat", f("tune.xhat"), "--init", (dir / "base").string(), "--out",
                                 (dir / "both").string(), "--epochs", "1"}) {
        both.push_back(a);
    }
    REQUIRE(run(both).code == kExitOk);
    // Warm start: the reconstructor model's epoch 0 scores the baseline's best checkpoint.
    const auto base_log = lines(dir / "base" / "train.log");
    const std::string best = slurp(dir / "base" / "best");
    const std::size_t best_epoch = std::stoul(best.substr(best.find('-') + 1));
    const auto both_log = lines(dir / "both" / "train.log");
    REQUIRE(both_log.size() == 2);
    CHECK(setting(both_log[0], "tune") == setting(base_log.at(best_epoch), "tune"));
    CHECK(slurp(dir / "both" / "vocab.src") == slurp(dir / "base" / "vocab.src"));

    // Reconstructor variants need labelled sources.
    std::vector<std::string> no_xhat(both.begin(), both.end());
    no_xhat.erase(no_xhat.begin() + static_cast<long>(small.size()) + 7, no_xhat.begin() + static_cast<long>(small.size()) + 9);
    CHECK(run(no_xhat).code == kExitData);

    const Run tr = run({"translate", "--model", (dir / "both").string(), "--src", f("test.src"), "--out",
                        (dir / "test.hyp").string(), "--beam", "3", "--kbest", (dir / "test.kbest").string()});
    REQUIRE(tr.code == kExitOk);
    CHECK(lines(dir / "test.hyp").size() == 12);
    const Run rr = run({"rerank", "--model", (dir / "both").string(), "--src", f("test.src"), "--xhat",
                        (dir / "test.mono").string(), "--out", (dir / "test.rr").string(), "--beam", "3",
                        "--lambda-dec", "0", "--lambda-enc", "1"});
    REQUIRE(rr.code == kExitOk);
    // With no decoder-side weight the reranked output is the likelihood 1-best.
    CHECK(slurp(dir / "test.rr") == slurp(dir / "test.hyp"));

    const Run ev = run({"evaluate", "--hyp", (dir / "test.rr").string(), "--ref", f("test.tgt"), "--drops",
                        f("test.drops")});
    REQUIRE(ev.code == kExitOk);
    CHECK(ev.out.find("dropped-pronoun recall") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
    const Run ok = run({"gradcheck", "--variant", "baseline"});
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("pass=1") != std::string::npos);
    CHECK(run({"--set", "tolerance=1e-300", "gradcheck", "--variant", "baseline"}).code == kExitFailure);
    CHECK(run({"gradcheck", "--variant", "sideways"}).code == kExitUsage);
}
