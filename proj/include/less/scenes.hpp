#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "less/config.hpp"
#include "less/errors.hpp"
#include "less/metrics.hpp"
#include "less/pointcloud.hpp"
#include "less/rng.hpp"
#include "less/textenc.hpp"

// Procedural desk-scale scenes: a floor plane with primitive objects, each
// object described by a color and a shape, and template referring
// expressions that single out exactly one object.

namespace less {

struct ColorDef {
    std::string name;
    std::array<double, 3> rgb;
};

inline const std::vector<ColorDef>& palette() {
    static const std::vector<ColorDef> p = {
        {"red", {0.85, 0.15, 0.15}},   {"green", {0.15, 0.7, 0.2}},   {"blue", {0.15, 0.25, 0.85}},
        {"yellow", {0.9, 0.85, 0.15}}, {"purple", {0.55, 0.2, 0.7}},  {"orange", {0.95, 0.55, 0.1}},
        {"white", {0.95, 0.95, 0.95}}, {"black", {0.08, 0.08, 0.08}},
    };
    return p;
}

inline constexpr std::array<double, 3> kFloorColor{0.5, 0.45, 0.4};

enum class ShapeKind : int { box = 0, cylinder = 1, sphere = 2 };

inline const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> s = {"box", "cylinder", "sphere"};
    return s;
}

// Words a query may use for each shape; the first is the canonical name.
inline const std::vector<std::vector<std::string>>& shape_words() {
    static const std::vector<std::vector<std::string>> w = {
        {"box", "cube", "crate"},
        {"cylinder", "barrel", "column"},
        {"sphere", "ball", "globe"},
    };
    return w;
}

inline std::size_t find_name(const std::vector<std::string>& names, const std::string& n, const char* what) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw ContractError(std::string("unknown ") + what + " '" + n + "'");
    return static_cast<std::size_t>(it - names.begin());
}

inline std::size_t color_index(const std::string& n) {
    std::vector<std::string> names;
    for (const auto& c : palette()) names.push_back(c.name);
    return find_name(names, n, "color");
}

inline std::size_t shape_index(const std::string& n) { return find_name(shape_names(), n, "shape"); }

struct SceneSpec {
    std::size_t min_objects = 4;
    std::size_t max_objects = 8;
    std::vector<std::string> shapes{"box", "cylinder", "sphere"};
    std::vector<std::string> colors{"red", "green", "blue", "yellow", "purple", "orange"};
    double floor_extent = 4.0;  // side of the square floor, metres
    std::size_t floor_points = 1200;
    std::size_t min_object_points = 150;
    std::size_t max_object_points = 300;
    double min_object_size = 0.25;
    double max_object_size = 0.6;
    double color_jitter = 0.03;
    double duplicate_probability = 0.3;  // chance of a second copy of the target's color and shape
    bool distractor = true;              // same shape, other color, next to every planted target
    std::size_t samples_per_scene = 2;
    std::size_t placement_tries = 100;
    double min_gap = 0.1;  // clearance between footprints

    void validate() const {
        if (min_objects < 1 || max_objects < min_objects) throw ContractError("scene spec: bad object count range");
        if (shapes.empty() || colors.empty()) throw ContractError("scene spec: empty shape or color set");
        for (const auto& s : shapes) shape_index(s);
        for (const auto& c : colors) color_index(c);
        if (distractor && max_objects >= 2 && colors.size() < 2)
            throw ContractError("scene spec: distractors need at least two colors");
        if (!(floor_extent > max_object_size)) throw ContractError("scene spec: floor smaller than an object");
        if (min_object_points < 1 || max_object_points < min_object_points)
            throw ContractError("scene spec: bad points-per-object range");
        if (!(min_object_size > 0.0) || max_object_size < min_object_size)
            throw ContractError("scene spec: bad object size range");
        if (samples_per_scene < 1) throw ContractError("scene spec: samples_per_scene must be positive");
    }

    void read(const KeyValues& kv) {
        kv.read("min_objects", min_objects);
        kv.read("max_objects", max_objects);
        kv.read("shapes", shapes);
        kv.read("colors", colors);
        kv.read("floor_extent", floor_extent);
        kv.read("floor_points", floor_points);
        kv.read("min_object_points", min_object_points);
        kv.read("max_object_points", max_object_points);
        kv.read("min_object_size", min_object_size);
        kv.read("max_object_size", max_object_size);
        kv.read("color_jitter", color_jitter);
        kv.read("duplicate_probability", duplicate_probability);
        kv.read("distractor", distractor);
        kv.read("samples_per_scene", samples_per_scene);
        kv.read("placement_tries", placement_tries);
        kv.read("min_gap", min_gap);
    }

    static SceneSpec load(const std::filesystem::path& path) {
        auto kv = KeyValues::load(path);
        SceneSpec s;
        s.read(kv);
        kv.require_all_used();
        s.validate();
        return s;
    }

    std::string dump() const {
        auto join = [](const std::vector<std::string>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
            return s;
        };
        std::ostringstream os;
        os.precision(17);
        os << "min_objects = " << min_objects << "\nmax_objects = " << max_objects << "\nshapes = " << join(shapes)
           << "\ncolors = " << join(colors) << "\nfloor_extent = " << floor_extent << "\nfloor_points = " << floor_points
           << "\nmin_object_points = " << min_object_points << "\nmax_object_points = " << max_object_points
           << "\nmin_object_size = " << min_object_size << "\nmax_object_size = " << max_object_size
           << "\ncolor_jitter = " << color_jitter << "\nduplicate_probability = " << duplicate_probability
           << "\ndistractor = " << (distractor ? "true" : "false") << "\nsamples_per_scene = " << samples_per_scene
           << "\nplacement_tries = " << placement_tries << "\nmin_gap = " << min_gap << '\n';
        return os.str();
    }
};

struct SceneObject {
    int instance = 0;
    std::size_t shape = 0;  // index into shape_names()
    std::size_t color = 0;  // index into palette()
    std::array<double, 3> lo{}, hi{};  // axis-aligned bounds

    double cx() const { return 0.5 * (lo[0] + hi[0]); }
    double cy() const { return 0.5 * (lo[1] + hi[1]); }
};

inline bool footprints_overlap(const SceneObject& a, const SceneObject& b) {
    return a.lo[0] < b.hi[0] && b.lo[0] < a.hi[0] && a.lo[1] < b.hi[1] && b.lo[1] < a.hi[1];
}

struct Scene {
    PointCloud cloud;
    LabelSet labels;  // floor is instance 0, semantic 0; objects are 1.. with semantic 1 + shape
    std::vector<SceneObject> objects;

    const SceneObject& object(int instance) const {
        for (const auto& o : objects)
            if (o.instance == instance) return o;
        throw LabelError("no object with instance id " + std::to_string(instance));
    }
};

namespace detail {

inline std::array<double, 3> jittered(const std::array<double, 3>& rgb, double sd, Rng& rng) {
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(rgb[k] + rng.normal(0.0, sd), 0.0, 1.0);
    return c;
}

// Surface point of an object whose footprint is centred at (cx, cy) and whose
// bounds are lo..hi; the bottom face rests on the floor and is not sampled.
inline std::array<double, 3> surface_point(ShapeKind shape, const SceneObject& o, Rng& rng) {
    const double cx = o.cx(), cy = o.cy();
    const double hx = 0.5 * (o.hi[0] - o.lo[0]), hy = 0.5 * (o.hi[1] - o.lo[1]), h = o.hi[2];
    switch (shape) {
        case ShapeKind::box: {
            const double top = 4 * hx * hy, side_x = 2 * hy * h, side_y = 2 * hx * h;
            double u = rng.uniform(0.0, top + 2 * side_x + 2 * side_y);
            const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
            if ((u -= top) < 0) return {cx + a * hx, cy + b * hy, h};
            if ((u -= side_x) < 0) return {cx + hx, cy + a * hy, 0.5 * (b + 1) * h};
            if ((u -= side_x) < 0) return {cx - hx, cy + a * hy, 0.5 * (b + 1) * h};
            if ((u -= side_y) < 0) return {cx + a * hx, cy + hy, 0.5 * (b + 1) * h};
            return {cx + a * hx, cy - hy, 0.5 * (b + 1) * h};
        }
        case ShapeKind::cylinder: {
            const double r = hx;
            const double side = 2 * std::numbers::pi * r * h, top = std::numbers::pi * r * r;
            const double t = rng.uniform(0.0, 2 * std::numbers::pi);
            if (rng.uniform(0.0, side + top) < side) return {cx + r * std::cos(t), cy + r * std::sin(t), rng.uniform(0.0, h)};
            const double rr = r * std::sqrt(rng.uniform());
            return {cx + rr * std::cos(t), cy + rr * std::sin(t), h};
        }
        case ShapeKind::sphere: {
            const double r = hx;
            double x, y, z, n;
            do {
                x = rng.normal(), y = rng.normal(), z = rng.normal();
                n = std::sqrt(x * x + y * y + z * z);
            } while (n < 1e-12);
            return {cx + r * x / n, cy + r * y / n, r + r * z / n};
        }
    }
    return {};
}

}  // namespace detail

// A floor plane plus primitive objects placed without footprint overlap. The
// first object drawn is a planted target; when there is room a distractor of
// the same shape and a different color is added, and with
// duplicate_probability a second copy of the target's color and shape.
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(spec.min_objects),
                                                      static_cast<std::int64_t>(spec.max_objects)));
    auto pick_shape = [&] { return shape_index(spec.shapes[rng.below(spec.shapes.size())]); };
    auto pick_color = [&] { return color_index(spec.colors[rng.below(spec.colors.size())]); };

    std::vector<std::pair<std::size_t, std::size_t>> kinds;  // (shape, color)
    kinds.emplace_back(pick_shape(), pick_color());
    if (spec.distractor && n >= 2) {
        std::size_t c;
        do c = pick_color();
        while (c == kinds[0].second);
        kinds.emplace_back(kinds[0].first, c);
    }
    if (kinds.size() < n && rng.uniform() < spec.duplicate_probability) kinds.push_back(kinds[0]);
    while (kinds.size() < n) kinds.emplace_back(pick_shape(), pick_color());
    rng.shuffle(kinds);

    Scene scene;
    const double half = 0.5 * spec.floor_extent;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        SceneObject o;
        o.instance = static_cast<int>(i + 1);
        o.shape = kinds[i].first;
        o.color = kinds[i].second;
        const auto kind = static_cast<ShapeKind>(o.shape);
        double hx = 0.5 * rng.uniform(spec.min_object_size, spec.max_object_size);
        double hy = kind == ShapeKind::box ? 0.5 * rng.uniform(spec.min_object_size, spec.max_object_size) : hx;
        double height = kind == ShapeKind::sphere ? 2 * hx : rng.uniform(spec.min_object_size, spec.max_object_size);
        bool placed = false;
        for (std::size_t t = 0; t < spec.placement_tries && !placed; ++t) {
            const double cx = rng.uniform(-half + hx, half - hx), cy = rng.uniform(-half + hy, half - hy);
            o.lo = {cx - hx, cy - hy, 0.0};
            o.hi = {cx + hx, cy + hy, height};
            SceneObject padded = o;
            for (int a = 0; a < 2; ++a) padded.lo[a] -= spec.min_gap, padded.hi[a] += spec.min_gap;
            placed = std::none_of(scene.objects.begin(), scene.objects.end(),
                                  [&](const SceneObject& other) { return footprints_overlap(padded, other); });
        }
        if (!placed)
            throw GenerationError("could not place object " + std::to_string(i + 1) + " of " +
                                  std::to_string(kinds.size()) + " after " + std::to_string(spec.placement_tries) +
                                  " tries; the scene spec is too crowded");
        scene.objects.push_back(o);
    }

    auto emit = [&](const std::array<double, 3>& p, const std::array<double, 3>& rgb, int semantic, int instance) {
        scene.cloud.points.push_back({p[0], p[1], p[2], rgb[0], rgb[1], rgb[2]});
        scene.labels.semantic.push_back(semantic);
        scene.labels.instance.push_back(instance);
    };
    for (std::size_t i = 0; i < spec.floor_points; ++i) {
        const std::array<double, 3> p{rng.uniform(-half, half), rng.uniform(-half, half), 0.0};
        const bool hidden = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
            return p[0] > o.lo[0] && p[0] < o.hi[0] && p[1] > o.lo[1] && p[1] < o.hi[1];
        });
        if (!hidden) emit(p, detail::jittered(kFloorColor, spec.color_jitter, rng), 0, 0);
    }
    for (const auto& o : scene.objects) {
        const auto count = static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(spec.min_object_points),
                                                              static_cast<std::int64_t>(spec.max_object_points)));
        for (std::size_t k = 0; k < count; ++k)
            emit(detail::surface_point(static_cast<ShapeKind>(o.shape), o, rng),
                 detail::jittered(palette()[o.color].rgb, spec.color_jitter, rng), 1 + static_cast<int>(o.shape),
                 o.instance);
    }
    return scene;
}

enum class Relation { none, near, left_of, right_of };

// A description "the {color} {shape}" optionally followed by a relation to a
// reference object, itself named by its (unique) color and shape.
struct Referral {
    std::size_t color = 0, shape = 0;
    Relation relation = Relation::none;
    int reference = 0;  // instance id when relation != none
};

// Nearest other object by footprint-centre distance; lowest id on ties.
inline int nearest_object(const Scene& scene, const SceneObject& o) {
    int best = 0;
    double best_d = INFINITY;
    for (const auto& other : scene.objects) {
        if (other.instance == o.instance) continue;
        const double d = std::hypot(other.cx() - o.cx(), other.cy() - o.cy());
        if (d < best_d) best_d = d, best = other.instance;
    }
    return best;
}

inline bool satisfies(const Scene& scene, const Referral& r, const SceneObject& o) {
    if (o.color != r.color || o.shape != r.shape) return false;
    if (r.relation == Relation::none) return true;
    if (o.instance == r.reference) return false;
    const auto& ref = scene.object(r.reference);
    switch (r.relation) {
        case Relation::near: return nearest_object(scene, o) == r.reference;
        case Relation::left_of: return o.cx() < ref.cx();
        case Relation::right_of: return o.cx() > ref.cx();
        case Relation::none: break;
    }
    return true;
}

inline std::vector<int> matching_instances(const Scene& scene, const Referral& r) {
    std::vector<int> out;
    for (const auto& o : scene.objects)
        if (satisfies(scene, r, o)) out.push_back(o.instance);
    return out;
}

// Every unambiguous description of `target`: the plain one when its color and
// shape are unique, otherwise relations to objects that are themselves unique.
inline std::vector<Referral> descriptions_of(const Scene& scene, const SceneObject& target) {
    std::vector<Referral> out;
    Referral plain{target.color, target.shape, Relation::none, 0};
    if (matching_instances(scene, plain).size() == 1) {
        out.push_back(plain);
        return out;
    }
    for (const auto& ref : scene.objects) {
        if (ref.instance == target.instance) continue;
        if (matching_instances(scene, {ref.color, ref.shape, Relation::none, 0}).size() != 1) continue;
        for (auto rel : {Relation::near, Relation::left_of, Relation::right_of}) {
            Referral r{target.color, target.shape, rel, ref.instance};
            auto m = matching_instances(scene, r);
            if (m.size() == 1 && m[0] == target.instance) out.push_back(r);
        }
    }
    return out;
}

inline bool has_distractor(const Scene& scene, const SceneObject& target) {
    return std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
        return o.shape == target.shape && o.color != target.color;
    });
}

namespace detail {

inline const std::vector<std::string>& query_prefixes() {
    static const std::vector<std::string> p = {"the", "find the", "select the", "segment the", "show me the",
                                               "point to the", "locate the", "look at the"};
    return p;
}

inline const std::vector<std::string>& query_suffixes() {
    static const std::vector<std::string> s = {"", " in the room", " on the floor"};
    return s;
}

inline const std::vector<std::string>& relation_phrases(Relation r) {
    static const std::vector<std::string> near{"near", "next to", "close to"};
    static const std::vector<std::string> left{"left of", "to the left of"};
    static const std::vector<std::string> right{"right of", "to the right of"};
    static const std::vector<std::string> none;
    switch (r) {
        case Relation::near: return near;
        case Relation::left_of: return left;
        case Relation::right_of: return right;
        case Relation::none: break;
    }
    return none;
}

template <class T>
const T& choose(const std::vector<T>& v, Rng& rng) {
    return v[rng.below(v.size())];
}

}  // namespace detail

struct Query {
    std::string text;
    int target = 0;
    Referral referral;
};

// Picks a target uniformly among objects with an unambiguous description,
// preferring objects not in `avoid`, then objects with a same-shape
// distractor, then plain descriptions over relations; then one of the
// target's descriptions uniformly.
inline Query generate_query(const Scene& scene, std::uint64_t seed, const std::vector<int>& avoid = {}) {
    Rng rng(seed);
    struct Candidate {
        int target;
        std::vector<Referral> descriptions;
        int rank;
    };
    std::vector<Candidate> cands;
    for (const auto& o : scene.objects) {
        auto d = descriptions_of(scene, o);
        if (d.empty()) continue;
        const bool avoided = std::find(avoid.begin(), avoid.end(), o.instance) != avoid.end();
        const bool plain = d.front().relation == Relation::none;
        cands.push_back({o.instance, std::move(d), (has_distractor(scene, o) ? 0 : plain ? 1 : 2) + (avoided ? 3 : 0)});
    }
    if (cands.empty()) throw GenerationError("no object in the scene has an unambiguous description");
    const int best = std::min_element(cands.begin(), cands.end(), [](auto& a, auto& b) { return a.rank < b.rank; })->rank;
    std::erase_if(cands, [&](const Candidate& c) { return c.rank != best; });
    const auto& c = detail::choose(cands, rng);
    const auto& r = detail::choose(c.descriptions, rng);

    Query q{"", c.target, r};
    auto name = [&](std::size_t color, std::size_t shape) {
        return palette()[color].name + " " + detail::choose(shape_words()[shape], rng);
    };
    q.text = detail::choose(detail::query_prefixes(), rng) + " " + name(r.color, r.shape);
    if (r.relation != Relation::none) {
        const auto& ref = scene.object(r.reference);
        q.text += " " + detail::choose(detail::relation_phrases(r.relation), rng) + " the " + name(ref.color, ref.shape);
    }
    q.text += detail::choose(detail::query_suffixes(), rng);
    return q;
}

// Every word a generated query can contain.
inline Vocabulary scene_vocabulary() {
    std::vector<std::string> words;
    auto add = [&](const std::string& text) {
        for (auto& w : split_words(text))
            if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    };
    for (const auto& p : detail::query_prefixes()) add(p);
    for (const auto& s : detail::query_suffixes()) add(s);
    for (auto r : {Relation::near, Relation::left_of, Relation::right_of})
        for (const auto& p : detail::relation_phrases(r)) add(p);
    for (const auto& c : palette()) add(c.name);
    for (const auto& ws : shape_words())
        for (const auto& w : ws) add(w);
    return Vocabulary(words);
}

struct SceneSample {
    std::string scene_id, sample_id;
    std::shared_ptr<const Scene> scene;
    std::string query_text;
    std::vector<std::size_t> tokens;
    int target = 0;
    Mask y;

    const PointCloud& cloud() const { return scene->cloud; }
    const LabelSet& labels() const { return scene->labels; }
    std::size_t size() const { return scene->cloud.size(); }

    void validate() const {
        if (!scene) throw ContractError("sample " + sample_id + " has no scene");
        if (y.size() != size()) throw DimensionError("sample " + sample_id + ": mask length differs from point count");
        if (std::count(y.begin(), y.end(), 1) < 1) throw LabelError("sample " + sample_id + " has no positive point");
        if (y != instance_to_binary(labels(), target))
            throw LabelError("sample " + sample_id + ": mask does not match target instance");
        if (tokens.empty()) throw ContractError("sample " + sample_id + " has no tokens");
    }
};

inline SceneSample sample_from_query(std::shared_ptr<const Scene> scene, const Query& q, const Vocabulary& vocab,
                                     std::string scene_id, std::string sample_id) {
    SceneSample s;
    s.scene_id = std::move(scene_id);
    s.sample_id = std::move(sample_id);
    s.query_text = q.text;
    s.tokens = tokenize(q.text, vocab);
    s.target = q.target;
    s.y = instance_to_binary(scene->labels, q.target);
    s.scene = std::move(scene);
    s.validate();
    return s;
}

// Up to spec.samples_per_scene samples from one scene, each preferring a
// target not used before. A scene with no describable object is redrawn from
// a derived seed.
inline std::vector<SceneSample> make_scene_samples(const SceneSpec& spec, std::uint64_t seed, const Vocabulary& vocab,
                                                   const std::string& scene_id, std::size_t count) {
    for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
        const std::uint64_t s = attempt == 0 ? seed : mix_seed(seed, 1000 + attempt);
        auto scene = std::make_shared<const Scene>(generate_scene(spec, s));
        std::vector<SceneSample> out;
        std::vector<int> used;
        try {
            for (std::size_t k = 0; k < count; ++k) {
                auto q = generate_query(*scene, mix_seed(s, k), used);
                used.push_back(q.target);
                out.push_back(sample_from_query(scene, q, vocab, scene_id, scene_id + "_" + std::to_string(k)));
            }
            return out;
        } catch (const GenerationError&) {
        }
    }
    throw GenerationError("scene " + scene_id + ": no describable object after 16 redraws");
}

inline SceneSample make_sample(const SceneSpec& spec, std::uint64_t seed) {
    return make_scene_samples(spec, seed, scene_vocabulary(), "scene", 1).front();
}

// Corpus directory:
//   vocab.txt                 vocabulary, one token per line
//   spec.txt                  the SceneSpec as key = value lines
//   index.txt                 one line per scene: <scene_id> <sample count>
//   scenes/<scene_id>.pts     point table (binary point file)
//   scenes/<scene_id>.samples manifest, see write_manifest
struct Corpus {
    Vocabulary vocab;
    std::vector<std::shared_ptr<const Scene>> scenes;
    std::vector<SceneSample> samples;
};

inline std::string scene_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene%04zu", i);
    return buf;
}

// `count` samples from ceil(count / samples_per_scene) scenes; scene i uses
// seed mix_seed(seed, i).
inline Corpus generate_corpus(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
    spec.validate();
    Corpus c;
    c.vocab = scene_vocabulary();
    for (std::size_t i = 0; c.samples.size() < count; ++i) {
        const std::size_t k = std::min(spec.samples_per_scene, count - c.samples.size());
        auto samples = make_scene_samples(spec, mix_seed(seed, i), c.vocab, scene_name(i), k);
        c.scenes.push_back(samples.front().scene);
        for (auto& s : samples) c.samples.push_back(std::move(s));
    }
    return c;
}

// Manifest text, one field per line or per tab-separated column:
//   scene <scene_id> <N>
//   semantic <N integers>
//   instance <N integers>
//   object <instance> <shape> <color> <lo x y z> <hi x y z>     (one per object)
//   sample\t<sample_id>\t<target instance>\t<query text>\t<RLE of Y>
inline void write_manifest(std::ostream& os, const std::string& scene_id, const Scene& scene,
                           const std::vector<const SceneSample*>& samples) {
    os.precision(17);
    os << "scene " << scene_id << ' ' << scene.cloud.size() << "\nsemantic";
    for (int v : scene.labels.semantic) os << ' ' << v;
    os << "\ninstance";
    for (int v : scene.labels.instance) os << ' ' << v;
    os << '\n';
    for (const auto& o : scene.objects) {
        os << "object " << o.instance << ' ' << shape_names()[o.shape] << ' ' << palette()[o.color].name;
        for (double v : o.lo) os << ' ' << v;
        for (double v : o.hi) os << ' ' << v;
        os << '\n';
    }
    for (const auto* s : samples)
        os << "sample\t" << s->sample_id << '\t' << s->target << '\t' << s->query_text << '\t' << rle_encode(s->y) << '\n';
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c, const SceneSpec& spec) {
    std::filesystem::create_directories(dir / "scenes");
    c.vocab.save(dir / "vocab.txt");
    {
        std::ofstream os(dir / "spec.txt");
        os << spec.dump();
    }
    std::ofstream index(dir / "index.txt");
    if (!index) throw FormatError("cannot write " + (dir / "index.txt").string());
    for (const auto& scene : c.scenes) {
        std::vector<const SceneSample*> mine;
        for (const auto& s : c.samples)
            if (s.scene == scene) mine.push_back(&s);
        const auto& id = mine.front()->scene_id;
        save_point_cloud(dir / "scenes" / (id + ".pts"), scene->cloud, PointFileFormat::binary);
        std::ofstream os(dir / "scenes" / (id + ".samples"));
        if (!os) throw FormatError("cannot write manifest for " + id);
        write_manifest(os, id, *scene, mine);
        index << id << ' ' << mine.size() << '\n';
    }
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
    Corpus c;
    c.vocab = Vocabulary::load(dir / "vocab.txt");
    std::ifstream index(dir / "index.txt");
    if (!index) throw FormatError("cannot read " + (dir / "index.txt").string());
    std::string id;
    std::size_t expected = 0;
    while (index >> id >> expected) {
        auto scene = std::make_shared<Scene>();
        scene->cloud = load_point_cloud(dir / "scenes" / (id + ".pts"));
        const auto path = dir / "scenes" / (id + ".samples");
        std::ifstream is(path);
        if (!is) throw FormatError("cannot read " + path.string());
        auto bad = [&](const std::string& why) { return FormatError(path.string() + ": " + why); };
        std::vector<std::tuple<std::string, int, std::string, std::string>> rows;
        for (std::string line; std::getline(is, line);) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "scene") {
                std::string sid;
                std::size_t n = 0;
                ls >> sid >> n;
                if (sid != id || n != scene->cloud.size()) throw bad("header does not match the point table");
            } else if (tag == "semantic" || tag == "instance") {
                auto& dst = tag == "semantic" ? scene->labels.semantic : scene->labels.instance;
                for (int v; ls >> v;) dst.push_back(v);
                if (dst.size() != scene->cloud.size()) throw bad(tag + " labels do not cover every point");
            } else if (tag == "object") {
                SceneObject o;
                std::string shape, color;
                ls >> o.instance >> shape >> color;
                for (auto& v : o.lo) ls >> v;
                for (auto& v : o.hi) ls >> v;
                if (!ls) throw bad("malformed object line");
                o.shape = shape_index(shape);
                o.color = color_index(color);
                scene->objects.push_back(o);
            } else if (tag == "sample") {
                std::vector<std::string> f;
                std::stringstream ss(line);
                for (std::string part; std::getline(ss, part, '\t');) f.push_back(part);
                if (f.size() != 5) throw bad("sample line needs 5 tab-separated fields");
                rows.emplace_back(f[1], std::stoi(f[2]), f[3], f[4]);
            } else {
                throw bad("unknown record '" + tag + "'");
            }
        }
        std::shared_ptr<const Scene> shared = scene;
        for (const auto& [sid, target, text, rle] : rows) {
            SceneSample s;
            s.scene_id = id;
            s.sample_id = sid;
            s.scene = shared;
            s.query_text = text;
            s.tokens = tokenize(text, c.vocab);
            s.target = target;
            s.y = rle_decode(rle, scene->cloud.size());
            s.validate();
            c.samples.push_back(std::move(s));
        }
        if (rows.size() != expected) throw bad("index lists " + std::to_string(expected) + " samples");
        c.scenes.push_back(shared);
    }
    if (c.scenes.empty()) throw FormatError(dir.string() + ": corpus has no scenes");
    return c;
}

}  // namespace less
