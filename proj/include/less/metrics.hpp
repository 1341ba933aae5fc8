#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "less/errors.hpp"

namespace less {

using Mask = std::vector<std::uint8_t>;

// |pred ∧ gt| / |pred ∨ gt|; two empty masks count as a match.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size())
        throw DimensionError("iou: mask lengths " + std::to_string(pred.size()) + " and " + std::to_string(gt.size()));
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Fraction of IoUs strictly above k.
inline double acc_at_k(std::span<const double> ious, double k) {
    if (ious.empty()) return 0.0;
    std::size_t hit = 0;
    for (double v : ious) {
        if (!(v >= 0.0 && v <= 1.0)) throw ContractError("acc_at_k: IoU outside [0, 1]");
        hit += v > k;
    }
    return static_cast<double>(hit) / static_cast<double>(ious.size());
}

inline double mean_iou(std::span<const double> ious) {
    if (ious.empty()) return 0.0;
    double s = 0.0;
    for (double v : ious) s += v;
    return s / static_cast<double>(ious.size());
}

inline constexpr double kAccThresholds[] = {0.25, 0.5};

struct EvalResult {
    std::vector<double> per_sample_iou;
    double miou = 0.0;
    std::map<double, double> acc_at;

    double acc25() const { return acc_at.at(0.25); }
    double acc50() const { return acc_at.at(0.5); }
};

inline EvalResult summarize(std::vector<double> ious) {
    EvalResult r;
    r.per_sample_iou = std::move(ious);
    r.miou = mean_iou(r.per_sample_iou);
    for (double k : kAccThresholds) r.acc_at[k] = acc_at_k(r.per_sample_iou, k);
    return r;
}

inline EvalResult evaluate_masks(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
    if (preds.size() != gts.size())
        throw DimensionError("evaluate_masks: " + std::to_string(preds.size()) + " predictions for " +
                             std::to_string(gts.size()) + " ground truths");
    std::vector<double> ious;
    ious.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) ious.push_back(iou(preds[i], gts[i]));
    return summarize(std::move(ious));
}

struct LabelSet {
    std::vector<int> semantic;
    std::vector<int> instance;

    std::size_t size() const { return instance.size(); }
};

inline Mask instance_to_binary(const LabelSet& labels, int target) {
    Mask m(labels.instance.size(), 0);
    bool found = false;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (labels.instance[i] == target) m[i] = 1, found = true;
    if (!found) throw LabelError("instance id " + std::to_string(target) + " does not occur in the scene");
    return m;
}

// Run-length text form of a binary mask: the value of the first element,
// then the lengths of the alternating runs. 0011100 → "0 2 3 2".
// The empty mask is "0".
inline std::string rle_encode(std::span<const std::uint8_t> mask) {
    std::ostringstream os;
    if (mask.empty()) return "0";
    os << (mask[0] ? 1 : 0);
    std::size_t run = 1;
    for (std::size_t i = 1; i < mask.size(); ++i) {
        if ((mask[i] != 0) == (mask[i - 1] != 0)) {
            ++run;
        } else {
            os << ' ' << run;
            run = 1;
        }
    }
    os << ' ' << run;
    return os.str();
}

inline Mask rle_decode(std::istream& is, std::size_t n) {
    int first = -1;
    if (!(is >> first) || (first != 0 && first != 1)) throw FormatError("rle: bad leading bit");
    Mask m;
    m.reserve(n);
    std::uint8_t bit = static_cast<std::uint8_t>(first);
    while (m.size() < n) {
        std::size_t run = 0;
        if (!(is >> run) || run == 0 || m.size() + run > n) throw FormatError("rle: runs do not add up to " + std::to_string(n));
        m.insert(m.end(), run, bit);
        bit ^= 1;
    }
    return m;
}

inline Mask rle_decode(const std::string& text, std::size_t n) {
    std::istringstream is(text);
    auto m = rle_decode(is, n);
    std::string extra;
    if (is >> extra) throw FormatError("rle: trailing data '" + extra + "'");
    return m;
}

// Prediction file: one line per sample,
//   <sample_id> <N> <rle...>
struct PredictionRecord {
    std::string sample_id;
    Mask mask;
};

inline void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    for (const auto& r : records) os << r.sample_id << ' ' << r.mask.size() << ' ' << rle_encode(r.mask) << '\n';
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read " + path.string());
    std::vector<PredictionRecord> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(is, line);) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        PredictionRecord r;
        std::size_t n = 0;
        if (!(ls >> r.sample_id >> n)) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad record");
        std::string rest;
        std::getline(ls, rest);
        try {
            r.mask = rle_decode(rest, n);
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace less
