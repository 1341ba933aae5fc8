#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "less/errors.hpp"
#include "less/ops.hpp"
#include "less/params.hpp"
#include "less/pointcloud.hpp"

// Hash-grid sparse voxel tensors, 3×3×3 sparse convolution (submanifold and
// stride 2) and the five-stage sparse U-Net that produces the fused point
// feature.

namespace less {

using Coord = std::array<std::int32_t, 3>;

struct CoordHash {
    std::size_t operator()(const Coord& c) const noexcept {
        std::uint64_t h = static_cast<std::uint32_t>(c[0]);
        h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(c[1]);
        h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(c[2]);
        return static_cast<std::size_t>(h ^ (h >> 29));
    }
};

using CoordIndex = std::unordered_map<Coord, std::size_t, CoordHash>;

inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
    std::int32_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

// Active voxels of one resolution level. Coordinates are in units of this
// level's cell, which spans `stride` base voxels per edge.
struct SparseVoxelTensor {
    int stride = 1;
    std::vector<Coord> coords;
    Tensor features;  // [|coords| × C]
    CoordIndex coord_index;

    SparseVoxelTensor() = default;
    SparseVoxelTensor(int stride_, std::vector<Coord> coords_, Tensor features_)
        : stride(stride_), coords(std::move(coords_)), features(std::move(features_)) {
        if (coords.empty()) throw DegenerateInputError("sparse tensor has no active voxels");
        if (features.rank() != 2 || features.rows() != coords.size())
            throw DimensionError("sparse tensor: " + std::to_string(coords.size()) + " coords vs features " +
                                 shape_str(features.shape()));
        coord_index.reserve(coords.size());
        for (std::size_t i = 0; i < coords.size(); ++i)
            if (!coord_index.emplace(coords[i], i).second) throw ContractError("sparse tensor: duplicate coordinate");
    }

    std::size_t size() const { return coords.size(); }
    std::size_t channels() const { return features.cols(); }

    // Same active set, new features.
    SparseVoxelTensor with_features(Tensor f) const {
        if (f.rank() != 2 || f.rows() != coords.size())
            throw DimensionError("sparse tensor: replacement features " + shape_str(f.shape()) + " for " +
                                 std::to_string(coords.size()) + " voxels");
        SparseVoxelTensor out;
        out.stride = stride;
        out.coords = coords;
        out.coord_index = coord_index;
        out.features = std::move(f);
        return out;
    }

    const std::size_t* find(const Coord& c) const {
        auto it = coord_index.find(c);
        return it == coord_index.end() ? nullptr : &it->second;
    }
};

struct VoxelPointMap {
    std::vector<std::size_t> point_to_voxel;
    std::vector<std::vector<std::size_t>> voxel_to_points;

    bool consistent() const {
        std::size_t total = 0;
        for (std::size_t v = 0; v < voxel_to_points.size(); ++v)
            for (auto p : voxel_to_points[v]) {
                if (p >= point_to_voxel.size() || point_to_voxel[p] != v) return false;
                ++total;
            }
        return total == point_to_voxel.size();
    }
};

inline Coord voxel_of(const std::array<double, 6>& p, double voxel_size) {
    return {static_cast<std::int32_t>(std::floor(p[0] / voxel_size)),
            static_cast<std::int32_t>(std::floor(p[1] / voxel_size)),
            static_cast<std::int32_t>(std::floor(p[2] / voxel_size))};
}

// Voxel coordinate = floor(xyz / voxel_size); voxel feature = mean of its
// points' (x, y, z, r, g, b). Voxels come out in lexicographic coordinate
// order, and each voxel's points are summed in sorted attribute order, so the
// result does not depend on the input point order.
inline std::pair<SparseVoxelTensor, VoxelPointMap> voxelize(const PointCloud& pc, double voxel_size) {
    if (pc.points.empty()) throw ContractError("voxelize: empty point cloud");
    if (!(voxel_size > 0.0)) throw ContractError("voxelize: voxel size must be positive");
    pc.validate();

    const std::size_t n = pc.size();
    std::vector<Coord> of_point(n);
    for (std::size_t i = 0; i < n; ++i) of_point[i] = voxel_of(pc.points[i], voxel_size);

    std::vector<Coord> coords = of_point;
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

    CoordIndex index;
    index.reserve(coords.size());
    for (std::size_t v = 0; v < coords.size(); ++v) index.emplace(coords[v], v);

    VoxelPointMap map;
    map.point_to_voxel.resize(n);
    map.voxel_to_points.resize(coords.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = index.at(of_point[i]);
        map.point_to_voxel[i] = v;
        map.voxel_to_points[v].push_back(i);
    }

    std::vector<double> feats(coords.size() * 6, 0.0);
    std::vector<std::array<double, 6>> rows;
    for (std::size_t v = 0; v < coords.size(); ++v) {
        rows.clear();
        for (auto p : map.voxel_to_points[v]) rows.push_back(pc.points[p]);
        std::sort(rows.begin(), rows.end());
        for (const auto& r : rows)
            for (int c = 0; c < 6; ++c) feats[v * 6 + c] += r[c];
        for (int c = 0; c < 6; ++c) feats[v * 6 + c] /= static_cast<double>(rows.size());
    }
    SparseVoxelTensor x(1, std::move(coords), Tensor({map.voxel_to_points.size(), 6}, std::move(feats)));
    return {std::move(x), std::move(map)};
}

// Each point receives its voxel's feature row; backward scatter-adds.
inline Tensor devoxelize(const Tensor& voxel_features, const VoxelPointMap& map) {
    if (voxel_features.rank() != 2 || voxel_features.rows() != map.voxel_to_points.size())
        throw DimensionError("devoxelize: features " + shape_str(voxel_features.shape()) + " for a map of " +
                             std::to_string(map.voxel_to_points.size()) + " voxels");
    return gather_rows(voxel_features, map.point_to_voxel);
}

constexpr std::size_t kKernelVolume = 27;

// Offset index k ↔ (dx, dy, dz) ∈ {−1,0,1}³ with k = 9(dx+1) + 3(dy+1) + (dz+1),
// matching the kernel layout [3][3][3][Cin][Cout].
inline Coord kernel_offset(std::size_t k) {
    return {static_cast<std::int32_t>(k / 9) - 1, static_cast<std::int32_t>((k / 3) % 3) - 1,
            static_cast<std::int32_t>(k % 3) - 1};
}

// (input row, output row) pairs per kernel offset.
struct KernelMap {
    std::array<std::vector<std::pair<std::uint32_t, std::uint32_t>>, kKernelVolume> pairs;
    std::size_t n_in = 0, n_out = 0;
};

enum class ConvMode { submanifold, strided2 };

// out[c] = Σ_d in[c + d] · K[d] over active neighbors.
inline KernelMap submanifold_map(const SparseVoxelTensor& x) {
    KernelMap km;
    km.n_in = km.n_out = x.size();
    for (std::size_t k = 0; k < kKernelVolume; ++k) {
        const Coord d = kernel_offset(k);
        auto& list = km.pairs[k];
        for (std::size_t o = 0; o < x.size(); ++o) {
            const Coord& c = x.coords[o];
            if (auto* i = x.find({c[0] + d[0], c[1] + d[1], c[2] + d[2]}))
                list.emplace_back(static_cast<std::uint32_t>(*i), static_cast<std::uint32_t>(o));
        }
    }
    return km;
}

// Output cells are the sorted unique floor(coord / 2); out[c] = Σ_d in[2c + d] · K[d].
inline std::pair<std::vector<Coord>, KernelMap> strided_map(const SparseVoxelTensor& x) {
    std::vector<Coord> out;
    out.reserve(x.size());
    for (const auto& c : x.coords) out.push_back({floor_div(c[0], 2), floor_div(c[1], 2), floor_div(c[2], 2)});
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());

    KernelMap km;
    km.n_in = x.size();
    km.n_out = out.size();
    for (std::size_t k = 0; k < kKernelVolume; ++k) {
        const Coord d = kernel_offset(k);
        auto& list = km.pairs[k];
        for (std::size_t o = 0; o < out.size(); ++o) {
            const Coord& c = out[o];
            if (auto* i = x.find({2 * c[0] + d[0], 2 * c[1] + d[1], 2 * c[2] + d[2]}))
                list.emplace_back(static_cast<std::uint32_t>(*i), static_cast<std::uint32_t>(o));
        }
    }
    return {std::move(out), std::move(km)};
}

// Applies a [3,3,3,Cin,Cout] kernel through a kernel map, plus optional bias.
inline Tensor apply_kernel_map(const Tensor& features, const Tensor& kernel, const KernelMap& km,
                               const Tensor& bias = {}) {
    if (kernel.rank() != 5 || kernel.dim(0) != 3 || kernel.dim(1) != 3 || kernel.dim(2) != 3)
        throw DimensionError("sparse_conv: kernel shape " + shape_str(kernel.shape()) + " is not [3,3,3,Cin,Cout]");
    const std::size_t cin = kernel.dim(3), cout = kernel.dim(4);
    if (features.rank() != 2 || features.cols() != cin || features.rows() != km.n_in)
        throw DimensionError("sparse_conv: features " + shape_str(features.shape()) + " do not match kernel " +
                             shape_str(kernel.shape()));
    if (bias.defined() && bias.numel() != cout)
        throw DimensionError("sparse_conv: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) +
                             " output channels");

    std::vector<double> y(km.n_out * cout, 0.0);
    if (bias.defined())
        for (std::size_t o = 0; o < km.n_out; ++o) std::copy(bias.data().begin(), bias.data().end(), y.begin() + o * cout);
    const double* in = features.data().data();
    const double* kw = kernel.data().data();
    for (std::size_t k = 0; k < kKernelVolume; ++k) {
        const double* kk = kw + k * cin * cout;
        for (auto [i, o] : km.pairs[k]) {
            const double* xi = in + static_cast<std::size_t>(i) * cin;
            double* yo = y.data() + static_cast<std::size_t>(o) * cout;
            for (std::size_t a = 0; a < cin; ++a) {
                const double xv = xi[a];
                if (xv == 0.0) continue;
                const double* kr = kk + a * cout;
                for (std::size_t b = 0; b < cout; ++b) yo[b] += xv * kr[b];
            }
        }
    }
    Tensor out({km.n_out, cout}, std::move(y));
    std::vector<Tensor> inputs{features, kernel};
    if (bias.defined()) inputs.push_back(bias);
    // The kernel map is captured by value; it is small next to the features.
    record_op("sparse_conv", inputs, out,
              [features, kernel, km, cin, cout](std::span<const double> g, std::span<const std::span<double>> gi) {
                  const double* in = features.data().data();
                  const double* kw = kernel.data().data();
                  std::vector<double> kt(cin * cout);  // K[d] transposed to [Cout][Cin]
                  for (std::size_t k = 0; k < kKernelVolume; ++k) {
                      const double* kk = kw + k * cin * cout;
                      double* gk = gi[1].empty() ? nullptr : gi[1].data() + k * cin * cout;
                      if (!gi[0].empty())
                          for (std::size_t a = 0; a < cin; ++a)
                              for (std::size_t b = 0; b < cout; ++b) kt[b * cin + a] = kk[a * cout + b];
                      for (auto [i, o] : km.pairs[k]) {
                          const double* go = g.data() + static_cast<std::size_t>(o) * cout;
                          if (!gi[0].empty()) {
                              double* gx = gi[0].data() + static_cast<std::size_t>(i) * cin;
                              for (std::size_t b = 0; b < cout; ++b) {
                                  const double gv = go[b];
                                  if (gv == 0.0) continue;
                                  const double* kr = kt.data() + b * cin;
                                  for (std::size_t a = 0; a < cin; ++a) gx[a] += gv * kr[a];
                              }
                          }
                          if (gk) {
                              const double* xi = in + static_cast<std::size_t>(i) * cin;
                              for (std::size_t a = 0; a < cin; ++a) {
                                  const double xv = xi[a];
                                  if (xv == 0.0) continue;
                                  double* gr = gk + a * cout;
                                  for (std::size_t b = 0; b < cout; ++b) gr[b] += xv * go[b];
                              }
                          }
                      }
                  }
                  if (gi.size() > 2 && !gi[2].empty())
                      for (std::size_t o = 0; o < g.size() / cout; ++o)
                          for (std::size_t b = 0; b < cout; ++b) gi[2][b] += g[o * cout + b];
              });
    return out;
}

inline SparseVoxelTensor sparse_conv(const SparseVoxelTensor& x, const Tensor& kernel, ConvMode mode,
                                     const Tensor& bias = {}) {
    if (kernel.rank() == 5 && kernel.dim(3) != x.channels())
        throw DimensionError("sparse_conv: input has " + std::to_string(x.channels()) + " channels, kernel " +
                             shape_str(kernel.shape()));
    if (mode == ConvMode::submanifold) {
        const auto km = submanifold_map(x);
        return x.with_features(apply_kernel_map(x.features, kernel, km, bias));
    }
    auto [coords, km] = strided_map(x);
    Tensor f = apply_kernel_map(x.features, kernel, km, bias);
    return SparseVoxelTensor(x.stride * 2, std::move(coords), std::move(f));
}

struct UNetConfig {
    std::size_t in_channels = 6;
    std::vector<std::size_t> channels{16, 32, 48, 64, 80};
    std::size_t out_channels = 64;
    // Expected active neighbors per kernel application, used as the He fan-in
    // multiplier. Voxels on surfaces see about 9 of the 27 offsets.
    double init_neighbors = 9.0;
};

// Receives stage index (0-based) and the stage output V_i; must return a
// tensor of the same shape.
using StageFuse = std::function<Tensor(std::size_t stage, const Tensor& v)>;

struct UNetOutput {
    std::vector<Tensor> stages;       // V_1..V_5 after fusion
    std::vector<std::size_t> active;  // voxel count per stage
    Tensor features;                  // F at base resolution, [N_vox × out_channels]
};

// Encoder: per stage two submanifold conv + ReLU, fusion callback, then a
// stride-2 conv + ReLU (except after the last stage). Decoder: each fine
// voxel copies its parent cell's feature, concatenates the encoder skip, and
// runs two submanifold conv + ReLU. A pointwise affine layer maps the base
// level to the output width.
class SparseUNet {
public:
    SparseUNet() = default;
    SparseUNet(ParameterStore& ps, const std::string& name, UNetConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.channels.empty()) throw ContractError("unet: no stages configured");
        if (!(cfg_.init_neighbors > 0.0)) throw ContractError("unet: init_neighbors must be positive");
        const std::size_t stages = cfg_.channels.size();
        std::size_t prev = cfg_.in_channels;
        for (std::size_t s = 0; s < stages; ++s) {
            const std::size_t c = cfg_.channels[s];
            const std::string p = name + ".enc" + std::to_string(s + 1);
            enc_.push_back({conv(ps, p + ".conv1", prev, c), bias(ps, p + ".conv1", c), conv(ps, p + ".conv2", c, c),
                            bias(ps, p + ".conv2", c), {}, {}});
            if (s + 1 < stages) {
                enc_.back().down = conv(ps, p + ".down", c, c);
                enc_.back().down_bias = bias(ps, p + ".down", c);
            }
            prev = c;
        }
        for (std::size_t s = 0; s + 1 < stages; ++s) {
            const std::size_t c = cfg_.channels[s], up = cfg_.channels[s + 1];
            const std::string p = name + ".dec" + std::to_string(s + 1);
            dec_.push_back({conv(ps, p + ".conv1", up + c, c), bias(ps, p + ".conv1", c), conv(ps, p + ".conv2", c, c),
                            bias(ps, p + ".conv2", c)});
        }
        head_ = Linear(ps, name + ".out", cfg_.channels[0], cfg_.out_channels);
    }

    const UNetConfig& config() const { return cfg_; }

    UNetOutput forward(const SparseVoxelTensor& x, const StageFuse& fuse = {}) const {
        if (x.channels() != cfg_.in_channels)
            throw DimensionError("unet: input has " + std::to_string(x.channels()) + " channels, expected " +
                                 std::to_string(cfg_.in_channels));
        const std::size_t stages = cfg_.channels.size();
        UNetOutput out;
        std::vector<SparseVoxelTensor> levels;
        std::vector<KernelMap> maps;
        std::vector<std::vector<std::size_t>> parent;  // level s voxel → level s+1 row

        SparseVoxelTensor cur = x;
        for (std::size_t s = 0; s < stages; ++s) {
            if (cur.size() == 0) throw DegenerateInputError("unet: stage " + std::to_string(s + 1) + " has no active voxels");
            maps.push_back(submanifold_map(cur));
            const auto& km = maps.back();
            Tensor h = relu(apply_kernel_map(cur.features, enc_[s].conv1, km, enc_[s].bias1));
            h = relu(apply_kernel_map(h, enc_[s].conv2, km, enc_[s].bias2));
            if (fuse) {
                Tensor fused = fuse(s, h);
                if (!fused.defined() || fused.shape() != h.shape())
                    throw DimensionError("unet: fusion at stage " + std::to_string(s + 1) + " changed shape " +
                                         shape_str(h.shape()));
                h = fused;
            }
            out.stages.push_back(h);
            out.active.push_back(cur.size());
            levels.push_back(cur.with_features(h));
            if (s + 1 == stages) break;

            auto [coords, down_map] = strided_map(levels.back());
            Tensor d = relu(apply_kernel_map(h, enc_[s].down, down_map, enc_[s].down_bias));
            SparseVoxelTensor next(cur.stride * 2, std::move(coords), std::move(d));
            std::vector<std::size_t> par(cur.size());
            for (std::size_t i = 0; i < cur.size(); ++i) {
                const Coord& c = cur.coords[i];
                par[i] = next.coord_index.at({floor_div(c[0], 2), floor_div(c[1], 2), floor_div(c[2], 2)});
            }
            parent.push_back(std::move(par));
            cur = std::move(next);
        }

        Tensor up = out.stages.back();
        for (std::size_t s = stages - 1; s-- > 0;) {
            Tensor copied = gather_rows(up, parent[s]);
            Tensor cat = concat_cols(copied, out.stages[s]);
            Tensor h = relu(apply_kernel_map(cat, dec_[s].conv1, maps[s], dec_[s].bias1));
            up = relu(apply_kernel_map(h, dec_[s].conv2, maps[s], dec_[s].bias2));
        }
        out.features = head_(up);
        return out;
    }

private:
    struct EncoderStage {
        Tensor conv1, bias1, conv2, bias2, down, down_bias;
    };
    struct DecoderStage {
        Tensor conv1, bias1, conv2, bias2;
    };

    Tensor conv(ParameterStore& ps, const std::string& name, std::size_t cin, std::size_t cout) const {
        const double fan_in = cfg_.init_neighbors * static_cast<double>(cin);
        return ps.normal(name + ".kernel", {3, 3, 3, cin, cout}, std::sqrt(2.0 / fan_in));
    }
    static Tensor bias(ParameterStore& ps, const std::string& name, std::size_t c) {
        return ps.zeros(name + ".bias", {c});
    }

    UNetConfig cfg_;
    std::vector<EncoderStage> enc_;
    std::vector<DecoderStage> dec_;
    Linear head_;
};

}  // namespace less
