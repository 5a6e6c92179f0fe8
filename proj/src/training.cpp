#include "dpnmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "dpnmt/error.hpp"
#include "dpnmt/rng.hpp"
#include "dpnmt/vocab.hpp"

namespace dpnmt {

namespace {

// Minibatches are split into shards of this many sentences; each shard gets
// its own graph and shard gradients are summed in shard order, so results do
// not depend on the worker count.
constexpr std::size_t kShard = 16;

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Shard {
    std::vector<std::vector<int>> src, tgt, lab;
};

Shard gather(const std::vector<Triple>& corpus, std::span<const std::size_t> idx) {
    Shard s;
    for (std::size_t i : idx) {
        s.src.push_back(corpus[i].source);
        s.tgt.push_back(corpus[i].target);
        s.lab.push_back(corpus[i].labelled);
    }
    return s;
}

struct ShardResult {
    Gradients grads;
    std::map<std::string, double> parts;
    std::exception_ptr error;
};

void add_parts(std::map<std::string, double>& into, const LossTerms& t) {
    into["likelihood"] += t.likelihood.scalar();
    if (t.enc_rec) into["enc_rec"] += t.enc_rec->scalar();
    if (t.dec_rec) into["dec_rec"] += t.dec_rec->scalar();
}

ShardResult run_shard(const Shard& s, const ModelConfig& model, const ParameterSet& params,
                      bool with_grad, std::uint64_t dropout_seed) {
    ShardResult r;
    try {
        Graph g(with_grad);
        Network net(g, params, model);
        Rng dropout(dropout_seed);
        const bool use_dropout = with_grad && model.dropout_rate > 0.0;
        const LossTerms terms =
            net.joint_loss(PaddedBatch::make(s.src), PaddedBatch::make(s.tgt),
                           PaddedBatch::make(s.lab), use_dropout ? &dropout : nullptr);
        add_parts(r.parts, terms);
        if (with_grad) {
            g.backward(terms.total);
            r.grads = g.gradients();
        }
    } catch (...) {
        r.error = std::current_exception();
    }
    return r;
}

// Runs shards on up to `workers` threads; results are returned in shard order.
std::vector<ShardResult> run_shards(const std::vector<Shard>& shards, const ModelConfig& model,
                                    const ParameterSet& params, bool with_grad,
                                    std::uint64_t seed, std::size_t workers) {
    std::vector<ShardResult> results(shards.size());
    auto work = [&](std::size_t w, std::size_t stride) {
        for (std::size_t i = w; i < shards.size(); i += stride) {
            results[i] = run_shard(shards[i], model, params, with_grad, seed + i);
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, shards.size()));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w, workers);
        for (auto& t : threads) t.join();
    }
    for (const auto& r : results) {
        if (r.error) std::rethrow_exception(r.error);
    }
    return results;
}

std::vector<Shard> shard_batch(const std::vector<Triple>& corpus,
                               std::span<const std::size_t> batch) {
    std::vector<Shard> out;
    for (std::size_t i = 0; i < batch.size(); i += kShard) {
        out.push_back(gather(corpus, batch.subspan(i, std::min(kShard, batch.size() - i))));
    }
    return out;
}

std::size_t words(const std::vector<int>& s) {
    return s.empty() ? 0 : s.size() - (s.back() == Vocabulary::kEos ? 1 : 0);
}

void validate_triples(const std::vector<Triple>& corpus, const ModelConfig& model,
                      const char* what) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Triple& t = corpus[i];
        try {
            if (t.source.empty()) throw DataError("empty source");
            check_ends_with_eos(t.target, "target");
            check_ends_with_eos(t.labelled, "labelled source");
            for (int id : t.source) {
                if (id < 0 || static_cast<std::size_t>(id) >= model.source_vocab_size) throw DataError("source id out of range");
            }
            for (int id : t.labelled) {
                if (id < 0 || static_cast<std::size_t>(id) >= model.source_vocab_size) throw DataError("labelled id out of range");
            }
            for (int id : t.target) {
                if (id < 0 || static_cast<std::size_t>(id) >= model.target_vocab_size) throw DataError("target id out of range");
            }
        } catch (const DataError& e) {
            throw DataError(std::string(what) + " sentence " + std::to_string(i) + ": " + e.what());
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0)) throw DataError("train config: adadelta_rho must be in (0, 1)");
    if (!(adadelta_eps > 0.0)) throw DataError("train config: adadelta_eps must be > 0");
    if (clip_norm < 0.0) throw DataError("train config: clip_norm must be >= 0");
    if (max_length < 1) throw DataError("train config: max_length must be >= 1");
    if (select_metric != "loglik" && select_metric != "bleu") {
        throw DataError("train config: select_metric must be loglik or bleu");
    }
    if (workers < 1) throw DataError("train config: workers must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
    return {
        {"batch_size", std::to_string(batch_size)},
        {"epochs_stage1", std::to_string(epochs_stage1)},
        {"epochs_stage2", std::to_string(epochs_stage2)},
        {"adadelta_rho", num(adadelta_rho)},
        {"adadelta_eps", num(adadelta_eps)},
        {"clip_norm", num(clip_norm)},
        {"shuffle_seed", std::to_string(shuffle_seed)},
        {"max_length", std::to_string(max_length)},
        {"select_metric", select_metric},
    };
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("batch_size")) c.batch_size = std::stoul(*v);
    if (auto v = get("epochs_stage1")) c.epochs_stage1 = std::stoul(*v);
    if (auto v = get("epochs_stage2")) c.epochs_stage2 = std::stoul(*v);
    if (auto v = get("adadelta_rho")) c.adadelta_rho = std::stod(*v);
    if (auto v = get("adadelta_eps")) c.adadelta_eps = std::stod(*v);
    if (auto v = get("clip_norm")) c.clip_norm = std::stod(*v);
    if (auto v = get("shuffle_seed")) c.shuffle_seed = std::stoull(*v);
    if (auto v = get("max_length")) c.max_length = std::stoul(*v);
    if (auto v = get("select_metric")) c.select_metric = *v;
    return c;
}

void adadelta_update(ParameterSet& params, const Gradients& grads, OptimizerState& state,
                     double rho, double eps) {
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (p.shape != g.shape) {
            throw ShapeError("adadelta: gradient " + name + " has shape " + shape_str(g.shape) +
                             ", parameter " + shape_str(p.shape));
        }
        auto [sq, fresh] = state.mean_sq_grad.try_emplace(name, Tensor(p.shape, 0.0));
        auto [dx, fresh2] = state.mean_sq_delta.try_emplace(name, Tensor(p.shape, 0.0));
        if (sq->second.shape != p.shape || dx->second.shape != p.shape) {
            throw ShapeError("adadelta: optimizer state for " + name + " does not match");
        }
        double* eg = sq->second.data.data();
        double* ed = dx->second.data.data();
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double gi = g.data[i];
            eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
            const double delta = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * gi;
            ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
            p.data[i] += delta;
        }
    }
}

double clip_global_norm(Gradients& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (double v : g.data) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& [name, g] : grads) {
            for (double& v : g.data) v *= f;
        }
    }
    return norm;
}

std::string EpochRecord::format() const {
    std::ostringstream os;
    os << "epoch=" << epoch << " batches=" << batches << " sentences=" << sentences;
    for (const auto& [name, v] : loss_sums) os << " " << name << "=" << num(v);
    os << " tune=" << num(tune_metric);
    os.precision(3);
    os << std::fixed << " seconds=" << seconds;
    return os.str();
}

std::map<std::string, double> corpus_loss(const std::vector<Triple>& corpus,
                                          const ModelConfig& model, const ParameterSet& params,
                                          std::size_t batch_size) {
    std::map<std::string, double> sums;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        const std::span<const std::size_t> idx(order.data() + i, std::min(batch_size, order.size() - i));
        const ShardResult r = run_shard(gather(corpus, idx), model, params, false, 0);
        if (r.error) std::rethrow_exception(r.error);
        for (const auto& [k, v] : r.parts) sums[k] += v;
    }
    return sums;
}

double mean_token_loglik(const std::vector<Triple>& corpus, const ModelConfig& model,
                         const ParameterSet& params, std::size_t batch_size) {
    if (corpus.empty()) {
        throw DataError("mean_token_loglik: empty corpus");
    }
    ModelConfig likelihood_only = model;
    likelihood_only.variant = Variant::Baseline;
    std::size_t tokens = 0;
    for (const auto& t : corpus) tokens += t.target.size();
    return -corpus_loss(corpus, likelihood_only, params, batch_size).at("likelihood") /
           static_cast<double>(tokens);
}

ParameterSet init_from_baseline(const ParameterSet& baseline, const ModelConfig& model,
                                std::uint64_t seed) {
    ModelConfig base_cfg = model;
    base_cfg.variant = Variant::Baseline;
    std::vector<std::string> missing;
    ParameterSet out;
    for (const auto& [name, shape] : parameter_shapes(base_cfg)) {
        if (!baseline.contains(name) || baseline.at(name).shape != shape) {
            missing.push_back(name);
        } else {
            out.set(name, baseline.at(name));
        }
    }
    if (!missing.empty()) {
        std::string msg = "baseline checkpoint lacks encoder-decoder tensors:";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }
    Rng rng(seed);
    if (has_enc_rec(model.variant)) init_reconstructor(out, model, ReconstructorRole::Encoder, rng);
    if (has_dec_rec(model.variant)) init_reconstructor(out, model, ReconstructorRole::Decoder, rng);
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<Triple>& corpus,
                                                   std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto la = std::make_pair(corpus[a].source.size(), corpus[a].target.size());
        const auto lb = std::make_pair(corpus[b].source.size(), corpus[b].target.size());
        return la < lb;
    });
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    rng.shuffle(batches);
    return batches;
}

TrainResult train(const std::vector<Triple>& corpus_in, const std::vector<Triple>& tune,
                  const ModelConfig& model, const TrainConfig& cfg, ParameterSet init,
                  std::size_t epochs, const TrainHooks& hooks) {
    cfg.validate();
    model.validate();
    check_parameters(init, model);
    if (cfg.select_metric == "bleu" && !hooks.tune_bleu) {
        throw DataError("train: select_metric=bleu needs a tuning BLEU scorer");
    }
    std::vector<Triple> corpus;
    for (const auto& t : corpus_in) {
        if (words(t.source) <= cfg.max_length && words(t.target) <= cfg.max_length) corpus.push_back(t);
    }
    if (corpus.empty()) {
        throw DataError("train: empty training corpus (after the length filter)");
    }
    if (tune.empty()) {
        throw DataError("train: empty tuning set");
    }
    validate_triples(corpus, model, "training");
    validate_triples(tune, model, "tuning");

    std::ofstream log_file;
    if (hooks.out_dir) {
        std::filesystem::create_directories(*hooks.out_dir);
        log_file.open(*hooks.out_dir / "train.log");
    }
    auto metric = [&](const ParameterSet& p) {
        return cfg.select_metric == "bleu" ? hooks.tune_bleu(p) : mean_token_loglik(tune, model, p);
    };
    TrainResult result;
    auto finish_epoch = [&](EpochRecord& rec, const ParameterSet& p,
                            std::chrono::steady_clock::time_point start) {
        rec.tune_metric = metric(p);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back(rec);
        if (rec.epoch == 0 || rec.tune_metric > result.best_metric) {
            result.best_metric = rec.tune_metric;
            result.best_epoch = rec.epoch;
            result.best = p;
        }
        if (hooks.out_dir) {
            const std::string name = "epoch-" + std::to_string(rec.epoch) + ".ckpt";
            save_checkpoint(p, *hooks.out_dir / name);
            std::ofstream best(*hooks.out_dir / "best");
            best << "epoch-" << result.best_epoch << ".ckpt\n";
            log_file << rec.format() << "\n";
            log_file.flush();
        }
        if (hooks.on_epoch) hooks.on_epoch(rec);
    };

    ParameterSet params = std::move(init);
    {
        const auto start = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.sentences = corpus.size();
        try {
            rec.loss_sums = corpus_loss(corpus, model, params);
        } catch (const NumericError& e) {
            throw NumericError(std::string("non-finite value at epoch 0 (initial evaluation): ") + e.what());
        }
        finish_epoch(rec, params, start);
    }

    OptimizerState opt;
    Rng rng(cfg.shuffle_seed);
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        const auto batches = make_batches(corpus, cfg.batch_size, rng);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const std::uint64_t dropout_seed = rng.next();
            std::vector<ShardResult> shards;
            try {
                shards = run_shards(shard_batch(corpus, batches[b]), model, params, true,
                                    dropout_seed, cfg.workers);
            } catch (const NumericError& e) {
                throw NumericError("non-finite value at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(b) + ": " + e.what());
            }
            Gradients grads;
            for (auto& s : shards) {
                for (auto& [name, g] : s.grads) {
                    auto [it, fresh] = grads.try_emplace(name, std::move(g));
                    if (!fresh) {
                        for (std::size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
                    }
                }
                for (const auto& [k, v] : s.parts) rec.loss_sums[k] += v;
            }
            const double scale = 1.0 / static_cast<double>(batches[b].size());
            for (auto& [name, g] : grads) {
                for (double& v : g.data) v = cfg.zero_gradients ? 0.0 : v * scale;
            }
            const double norm = clip_global_norm(grads, cfg.clip_norm);
            if (!std::isfinite(norm)) {
                throw NumericError("non-finite gradient norm at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(b));
            }
            adadelta_update(params, grads, opt, cfg.adadelta_rho, cfg.adadelta_eps);
            rec.batches += 1;
            rec.sentences += batches[b].size();
        }
        finish_epoch(rec, params, start);
    }
    result.last = std::move(params);
    return result;
}

}  // namespace dpnmt
