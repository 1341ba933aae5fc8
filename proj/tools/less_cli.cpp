#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "less/gradsuite.hpp"
#include "less/trainer.hpp"

using namespace less;

namespace {

int gen_corpus(const std::string& spec_path, const std::string& out, std::size_t count, std::uint64_t seed) {
    const SceneSpec spec = spec_path.empty() ? SceneSpec{} : SceneSpec::load(spec_path);
    const Corpus corpus = generate_corpus(spec, count, seed);
    write_corpus(out, corpus, spec);
    std::size_t points = 0;
    for (const auto& s : corpus.scenes) points += s->cloud.size();
    std::printf("wrote %zu samples from %zu scenes (%zu points) to %s\n", corpus.samples.size(), corpus.scenes.size(),
                points, out.c_str());
    return 0;
}

int train(const std::string& config_path, bool resume) {
    const TrainConfig cfg = TrainConfig::load(config_path);
    if (cfg.corpus.empty()) throw FormatError(config_path + ": corpus is not set");
    const Corpus corpus = load_corpus(cfg.corpus);
    Trainer trainer(cfg, corpus);
    if (resume) {
        if (cfg.checkpoint.empty()) throw FormatError("--resume needs a checkpoint path in the config");
        trainer.restore(load_checkpoint(cfg.checkpoint));
    }
    const auto split = trainer.split();
    std::fprintf(stderr, "train %zu samples, held out %zu, %zu parameters\n", split.train.size(), split.heldout.size(),
                 trainer.model().parameters().scalar_count());
    trainer.train(&std::cout);
    return 0;
}

int eval(const std::string& checkpoint, const std::string& corpus_dir, const std::string& report,
         const std::string& predictions) {
    const Corpus corpus = load_corpus(corpus_dir);
    const auto model = model_from_checkpoint(load_checkpoint(checkpoint), corpus.vocab.size());
    std::vector<const SceneSample*> samples;
    for (const auto& s : corpus.samples) samples.push_back(&s);
    std::vector<Mask> preds;
    const auto t0 = std::chrono::steady_clock::now();
    const EvalResult r = evaluate(*model, samples, &preds);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::ordered_json j;
    j["checkpoint"] = checkpoint;
    j["corpus"] = corpus_dir;
    j["samples"] = samples.size();
    j["miou"] = r.miou;
    j["acc25"] = r.acc25();
    j["acc50"] = r.acc50();
    j["per_sample"] = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i)
        j["per_sample"].push_back({{"id", samples[i]->sample_id}, {"iou", r.per_sample_iou[i]}});
    std::ofstream os(report);
    if (!os) throw FormatError("cannot write " + report);
    os << j.dump(2) << '\n';

    if (!predictions.empty()) {
        std::vector<PredictionRecord> recs;
        for (std::size_t i = 0; i < samples.size(); ++i) recs.push_back({samples[i]->sample_id, preds[i]});
        write_predictions(predictions, recs);
    }
    std::printf("samples=%zu miou=%.6f acc25=%.6f acc50=%.6f seconds=%.1f\n", samples.size(), r.miou, r.acc25(),
                r.acc50(), seconds);
    return 0;
}

int gradcheck(const std::string& module, std::size_t instances) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = run_gradient_suite(module, instances);
    std::size_t failed = 0;
    std::string last;
    double worst = 0.0;
    auto flush = [&](const GradRow* next) {
        if (!last.empty() && (!next || next->module + "/" + next->name != last)) {
            std::printf("%-28s worst_rel=%.3e\n", last.c_str(), worst);
            worst = 0.0;
        }
    };
    for (const auto& row : rows) {
        flush(&row);
        last = row.module + "/" + row.name;
        worst = std::max(worst, row.result.max_rel_error);
        if (!row.passed()) {
            ++failed;
            std::printf("FAIL %s instance %llu rel=%.3e tol=%.0e\n", last.c_str(),
                        static_cast<unsigned long long>(row.instance), row.result.max_rel_error, row.tolerance);
        }
    }
    flush(nullptr);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%zu checks, %zu failed, %.2f s\n", rows.size(), failed, seconds);
    return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"less: single-stage referring 3D segmentation"};
    app.require_subcommand(1);

    std::string spec, out;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic scene corpus");
    gen->add_option("--spec", spec, "scene spec file (key = value)")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--count", count, "number of samples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "corpus seed");

    std::string config;
    bool resume = false;
    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", config, "training config (key = value)")->required()->check(CLI::ExistingFile);
    tr->add_flag("--resume", resume, "continue from the configured checkpoint");

    std::string checkpoint, corpus, report, predictions;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    ev->add_option("--corpus", corpus)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--report", report, "JSON report path")->required();
    ev->add_option("--predictions", predictions, "optional per-sample RLE prediction file");

    std::string module;
    std::size_t instances = 5;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--module", module, "tensor, sparse3d, textenc, fusion, head, losses or pipeline");
    gc->add_option("--instances", instances, "random instances per check")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return gen_corpus(spec, out, count, seed);
        if (*tr) return train(config, resume);
        if (*ev) return eval(checkpoint, corpus, report, predictions);
        if (*gc) return gradcheck(module, instances);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
