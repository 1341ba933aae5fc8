#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "less/checkpoint.hpp"
#include "less/config.hpp"
#include "less/losses.hpp"
#include "less/metrics.hpp"
#include "less/model.hpp"
#include "less/optim.hpp"
#include "less/scenes.hpp"

namespace less {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 2;
    double lr = 1e-4;
    double text_lr = 2e-5;
    double lr_decay = 0.95;
    std::uint64_t seed = 0;
    std::size_t max_steps = 0;  // 0: no cap
    double train_fraction = 0.8;
    bool eval_train = false;  // no-grad pass over the training split at each epoch end
    std::string corpus;
    std::string checkpoint;
    std::string metrics_log;

    ModelConfig model;
    LossConfig loss;

    void validate() const {
        if (!(lr > 0.0) || !(text_lr > 0.0)) throw ContractError("train config: learning rates must be positive");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ContractError("train config: lr_decay must be in (0, 1]");
        if (batch_size < 1) throw ContractError("train config: batch_size must be positive");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0))
            throw ContractError("train config: train_fraction must be in (0, 1]");
        model.validate();
        loss.validate();
    }

    void read(const KeyValues& kv) {
        kv.read("epochs", epochs);
        kv.read("batch_size", batch_size);
        kv.read("lr", lr);
        kv.read("text_lr", text_lr);
        kv.read("lr_decay", lr_decay);
        kv.read("seed", seed);
        kv.read("max_steps", max_steps);
        kv.read("train_fraction", train_fraction);
        kv.read("eval_train", eval_train);
        kv.read("corpus", corpus);
        kv.read("checkpoint", checkpoint);
        kv.read("metrics_log", metrics_log);

        kv.read("voxel_size", model.voxel_size);
        kv.read("width", model.width);
        kv.read("init_neighbors", model.init_neighbors);
        kv.read("max_len", model.max_len);
        if (kv.has("unet_channels")) {
            std::vector<std::string> items;
            kv.read("unet_channels", items);
            model.unet_channels.clear();
            for (const auto& s : items) model.unet_channels.push_back(std::stoul(s));
        }
        std::string text;
        if (kv.has("fusion")) {
            kv.read("fusion", text);
            if (text == "pwca") model.fusion = FusionMode::pwca;
            else if (text == "baseline_add") model.fusion = FusionMode::baseline_add;
            else throw FormatError("fusion must be pwca or baseline_add, got '" + text + "'");
        }
        kv.read("queries", model.head.queries);
        kv.read("qmp_layers", model.head.layers);
        kv.read("zero_query_init", model.head.zero_query_init);
        if (kv.has("selection")) {
            kv.read("selection", text);
            if (text == "weighted_sum") model.head.selection = MaskSelection::weighted_sum;
            else if (text == "top1") model.head.selection = MaskSelection::top1;
            else if (text == "mlp") model.head.selection = MaskSelection::mlp;
            else throw FormatError("selection must be weighted_sum, top1 or mlp, got '" + text + "'");
        }

        kv.read("lambda_seg", loss.lambda_seg);
        kv.read("lambda_area", loss.lambda_area);
        kv.read("lambda_p2p", loss.lambda_p2p);
        kv.read("tau", loss.tau);
        kv.read("max_negatives", loss.max_negatives);
        if (kv.has("p2p_form")) {
            kv.read("p2p_form", text);
            if (text == "log_form") loss.p2p_form = P2PForm::log_form;
            else if (text == "as_written") loss.p2p_form = P2PForm::as_written;
            else throw FormatError("p2p_form must be log_form or as_written, got '" + text + "'");
        }
    }

    static TrainConfig parse(const KeyValues& kv) {
        TrainConfig c;
        c.read(kv);
        kv.require_all_used();
        c.validate();
        return c;
    }

    static TrainConfig load(const std::filesystem::path& path) { return parse(KeyValues::load(path)); }

    static TrainConfig parse(const std::string& text) {
        std::istringstream is(text);
        return parse(KeyValues::parse(is));
    }

    std::string dump() const {
        std::ostringstream os;
        os.precision(17);
        std::string channels;
        for (std::size_t i = 0; i < model.unet_channels.size(); ++i)
            channels += (i ? "," : "") + std::to_string(model.unet_channels[i]);
        const char* selection[] = {"weighted_sum", "top1", "mlp"};
        os << "epochs = " << epochs << "\nbatch_size = " << batch_size << "\nlr = " << lr << "\ntext_lr = " << text_lr
           << "\nlr_decay = " << lr_decay << "\nseed = " << seed << "\nmax_steps = " << max_steps
           << "\ntrain_fraction = " << train_fraction << "\neval_train = " << (eval_train ? "true" : "false")
           << "\ncorpus = " << corpus << "\ncheckpoint = " << checkpoint << "\nmetrics_log = " << metrics_log
           << "\nvoxel_size = " << model.voxel_size << "\ninit_neighbors = " << model.init_neighbors
           << "\nwidth = " << model.width << "\nmax_len = " << model.max_len
           << "\nunet_channels = " << channels
           << "\nfusion = " << (model.fusion == FusionMode::pwca ? "pwca" : "baseline_add")
           << "\nqueries = " << model.head.queries << "\nqmp_layers = " << model.head.layers
           << "\nzero_query_init = " << (model.head.zero_query_init ? "true" : "false")
           << "\nselection = " << selection[static_cast<int>(model.head.selection)]
           << "\nlambda_seg = " << loss.lambda_seg << "\nlambda_area = " << loss.lambda_area
           << "\nlambda_p2p = " << loss.lambda_p2p << "\ntau = " << loss.tau << "\nmax_negatives = " << loss.max_negatives
           << "\np2p_form = " << (loss.p2p_form == P2PForm::log_form ? "log_form" : "as_written") << '\n';
        return os.str();
    }
};

// Worker threads for evaluation and corpus generation: LESS_NUM_THREADS if
// set, else the hardware concurrency.
inline std::size_t worker_threads() {
    if (const char* env = std::getenv("LESS_NUM_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static
// interleaved partition; results must be written to per-index slots.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct Split {
    std::vector<std::size_t> train, heldout;  // sample indices
};

// The first round(fraction · scenes) scenes in corpus order train; the rest
// are held out. Samples of one scene never straddle the split.
inline Split split_by_scene(const Corpus& corpus, double fraction) {
    std::vector<std::string> ids;
    for (const auto& s : corpus.samples)
        if (ids.empty() || ids.back() != s.scene_id) ids.push_back(s.scene_id);
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
    Split split;
    std::size_t scene = 0;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        if (i > 0 && corpus.samples[i].scene_id != corpus.samples[i - 1].scene_id) ++scene;
        (scene < std::max<std::size_t>(n_train, 1) ? split.train : split.heldout).push_back(i);
    }
    return split;
}

// Forward every sample without recording gradients.
inline EvalResult evaluate(const LessModel& model, const std::vector<const SceneSample*>& samples,
                           std::vector<Mask>* predictions = nullptr, std::size_t threads = worker_threads()) {
    std::vector<double> ious(samples.size());
    std::vector<Mask> preds(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        NoGradScope off;
        auto r = model.forward(samples[i]->cloud(), samples[i]->tokens);
        ious[i] = iou(r.prediction.mask, samples[i]->y);
        preds[i] = std::move(r.prediction.mask);
    });
    if (predictions) *predictions = std::move(preds);
    return summarize(std::move(ious));
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    std::size_t steps = 0;  // optimizer steps so far
    LossReport loss;        // mean over the epoch's samples
    EvalResult train;
    std::optional<EvalResult> heldout;
};

// One line per epoch:
//   epoch=<e> lr=<lr> seg=<> area=<> p2p=<> total=<> miou=<> acc25=<> acc50=<>
//   [heldout_miou=<> heldout_acc25=<> heldout_acc50=<>]
// miou/acc are over the training split.
inline std::string format_record(const EpochRecord& r) {
    char buf[512];
    int n = std::snprintf(buf, sizeof buf,
                          "epoch=%zu lr=%.9g seg=%.9g area=%.9g p2p=%.9g total=%.9g miou=%.9g acc25=%.9g acc50=%.9g",
                          r.epoch, r.lr, r.loss.seg, r.loss.area, r.loss.p2p, r.loss.total, r.train.miou, r.train.acc25(),
                          r.train.acc50());
    if (r.heldout)
        std::snprintf(buf + n, sizeof buf - static_cast<std::size_t>(n), " heldout_miou=%.9g heldout_acc25=%.9g heldout_acc50=%.9g",
                      r.heldout->miou, r.heldout->acc25(), r.heldout->acc50());
    return buf;
}

class Trainer {
public:
    Trainer(TrainConfig cfg, const Corpus& corpus) : cfg_(std::move(cfg)), corpus_(corpus) {
        cfg_.model.vocab_size = corpus_.vocab.size();
        cfg_.validate();
        model_ = std::make_unique<LessModel>(cfg_.model, mix_seed(cfg_.seed, 0));
        adam_ = Adam(model_->parameters());
        split_ = split_by_scene(corpus_, cfg_.train_fraction);
    }

    const TrainConfig& config() const { return cfg_; }
    LessModel& model() { return *model_; }
    const LessModel& model() const { return *model_; }
    Adam& optimizer() { return adam_; }
    const Split& split() const { return split_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t steps() const { return adam_.steps(); }
    bool done() const { return epoch_ >= cfg_.epochs || (cfg_.max_steps && steps() >= cfg_.max_steps); }

    double lr_at(std::size_t epoch) const { return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch)); }
    double text_lr_at(std::size_t epoch) const {
        return cfg_.text_lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch));
    }

    std::vector<const SceneSample*> samples(const std::vector<std::size_t>& idx) const {
        std::vector<const SceneSample*> out;
        for (auto i : idx) out.push_back(&corpus_.samples[i]);
        return out;
    }

    // One optimization step over `batch` (sample indices); returns per-sample
    // losses and fills `ious` with the pre-update predictions' IoU.
    std::vector<LossReport> step(const std::vector<std::size_t>& batch, std::vector<double>* ious = nullptr) {
        auto& ps = model_->parameters();
        ps.zero_grad();
        std::vector<LossReport> reports;
        for (auto i : batch) {
            const auto& s = corpus_.samples[i];
            Tape tape;
            Tensor total;
            {
                GradScope scope(tape);
                auto r = model_->forward(s.cloud(), s.tokens);
                Rng neg_rng(mix_seed(mix_seed(cfg_.seed, 1 + adam_.steps()), i));
                auto terms = compute_losses(r.prediction.mask_logits, r.features, s.y, cfg_.loss, neg_rng);
                reports.push_back(terms.report);
                total = scale(terms.total, 1.0 / static_cast<double>(batch.size()));
                if (ious) ious->push_back(iou(r.prediction.mask, s.y));
            }
            backward(total, tape);
        }
        adam_.step(ps, lr_at(epoch_), text_lr_at(epoch_));
        return reports;
    }

    EpochRecord run_epoch() {
        EpochRecord rec;
        rec.epoch = epoch_ + 1;
        rec.lr = lr_at(epoch_);
        auto order = split_.train;
        Rng rng(mix_seed(cfg_.seed, 1'000'000 + epoch_));
        rng.shuffle(order);
        std::vector<double> ious;
        std::size_t count = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
            if (cfg_.max_steps && steps() >= cfg_.max_steps) break;
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                 order.begin() + static_cast<std::ptrdiff_t>(
                                                                     std::min(order.size(), b + cfg_.batch_size)));
            for (const auto& r : step(batch, &ious)) {
                rec.loss.seg += r.seg;
                rec.loss.area += r.area;
                rec.loss.p2p += r.p2p;
                rec.loss.total += r.total;
                ++count;
            }
        }
        if (count) {
            const double n = static_cast<double>(count);
            rec.loss.seg /= n, rec.loss.area /= n, rec.loss.p2p /= n, rec.loss.total /= n;
        }
        ++epoch_;
        rec.steps = steps();
        rec.train = cfg_.eval_train ? evaluate(*model_, samples(split_.train)) : summarize(std::move(ious));
        if (!split_.heldout.empty()) rec.heldout = evaluate(*model_, samples(split_.heldout));
        return rec;
    }

    // Runs the remaining epochs, writing one log line per epoch and a
    // checkpoint after each when configured. A resumed run appends to the log.
    std::vector<EpochRecord> train(std::ostream* log = nullptr,
                                   const std::function<void(const EpochRecord&)>& on_epoch = {}) {
        std::vector<EpochRecord> out;
        std::ofstream file;
        if (!cfg_.metrics_log.empty()) {
            file.open(cfg_.metrics_log, epoch_ ? std::ios::app : std::ios::trunc);
            if (!file) throw FormatError("cannot write " + cfg_.metrics_log);
        }
        while (!done()) {
            out.push_back(run_epoch());
            const auto line = format_record(out.back());
            if (file) file << line << '\n' << std::flush;
            if (log) *log << line << '\n' << std::flush;
            if (!cfg_.checkpoint.empty()) save_checkpoint(cfg_.checkpoint, checkpoint());
            if (on_epoch) on_epoch(out.back());
        }
        return out;
    }

    Checkpoint checkpoint() const {
        Checkpoint c;
        c.epoch = epoch_;
        c.adam_steps = adam_.steps();
        c.config = cfg_.dump();
        const auto& params = model_->parameters().params();
        for (const auto& p : params) c.arrays.push_back({"param/" + p.name, p.value.shape(), p.value.to_vector()});
        for (std::size_t i = 0; i < params.size(); ++i)
            c.arrays.push_back({"adam_m/" + params[i].name, params[i].value.shape(), adam_.first_moments()[i]});
        for (std::size_t i = 0; i < params.size(); ++i)
            c.arrays.push_back({"adam_v/" + params[i].name, params[i].value.shape(), adam_.second_moments()[i]});
        return c;
    }

    void restore(const Checkpoint& c) {
        auto& params = model_->parameters().params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& p = c.array("param/" + params[i].name);
            if (p.shape != params[i].value.shape())
                throw FormatError("checkpoint: shape of " + params[i].name + " is " + shape_str(p.shape) +
                                  ", model expects " + shape_str(params[i].value.shape()));
            std::copy(p.values.begin(), p.values.end(), params[i].value.mutable_data().begin());
            adam_.first_moments()[i] = c.array("adam_m/" + params[i].name).values;
            adam_.second_moments()[i] = c.array("adam_v/" + params[i].name).values;
        }
        adam_.set_steps(c.adam_steps);
        epoch_ = c.epoch;
    }

private:
    TrainConfig cfg_;
    const Corpus& corpus_;
    std::unique_ptr<LessModel> model_;
    Adam adam_;
    Split split_;
    std::size_t epoch_ = 0;
};

// A model with the weights of a checkpoint; its vocabulary size must match.
inline std::unique_ptr<LessModel> model_from_checkpoint(const Checkpoint& c, std::size_t vocab_size) {
    auto cfg = TrainConfig::parse(c.config);
    cfg.model.vocab_size = vocab_size;
    auto model = std::make_unique<LessModel>(cfg.model, mix_seed(cfg.seed, 0));
    for (auto& p : model->parameters().params()) {
        const auto& a = c.array("param/" + p.name);
        if (a.shape != p.value.shape())
            throw FormatError("checkpoint does not fit this corpus: " + p.name + " is " + shape_str(a.shape) +
                              ", expected " + shape_str(p.value.shape()));
        std::copy(a.values.begin(), a.values.end(), p.value.mutable_data().begin());
    }
    return model;
}

}  // namespace less
