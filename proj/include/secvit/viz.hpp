#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "secvit/cluster.hpp"
#include "secvit/tensor.hpp"

namespace secvit {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

// 32 visually distinct tints; cluster id wraps around.
inline const std::array<Rgb, 32>& cluster_palette() {
    static const std::array<Rgb, 32> pal = {{
        {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200},{128, 0, 0},
        {170, 255, 195}, {128, 128, 0},   {255, 215, 180},{0, 0, 128},    {128, 128, 128},
        {255, 255, 255}, {0, 0, 0},       {255, 80, 80},  {80, 255, 80},  {80, 80, 255},
        {200, 200, 0},   {0, 200, 200},   {200, 0, 200},  {100, 60, 20},  {20, 100, 60},
        {60, 20, 100},   {180, 140, 240},
    }};
    return pal;
}

// Binary PPM (P6): "P6\n<w> <h>\n255\n" + raw RGB rows.
inline void write_ppm(const std::string& path, std::size_t width, std::size_t height,
                      const std::vector<Rgb>& pixels) {
    if (pixels.size() != width * height)
        throw std::invalid_argument("write_ppm: pixel count does not match dims");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
    f << "P6\n" << width << ' ' << height << "\n255\n";
    for (const Rgb& p : pixels) {
        f.put(char(p.r));
        f.put(char(p.g));
        f.put(char(p.b));
    }
    if (!f) throw std::runtime_error("write_ppm: write failed for '" + path + "'");
}

// Each token (one cell of the H x W token grid) becomes a block_px x block_px
// tile tinted by its cluster id.
inline std::vector<Rgb> render_cluster_map(const std::vector<std::uint32_t>& cluster_of_token,
                                           std::size_t H, std::size_t W, std::size_t block_px) {
    if (cluster_of_token.size() != H * W)
        throw std::invalid_argument("render_cluster_map: need one cluster id per token");
    if (block_px == 0) throw std::invalid_argument("render_cluster_map: zero block size");
    const auto& pal = cluster_palette();
    std::vector<Rgb> out(H * block_px * W * block_px);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            Rgb tint = pal[cluster_of_token[r * W + c] % pal.size()];
            for (std::size_t dr = 0; dr < block_px; ++dr)
                for (std::size_t dc = 0; dc < block_px; ++dc)
                    out[(r * block_px + dr) * W * block_px + c * block_px + dc] = tint;
        }
    return out;
}

inline std::vector<std::uint32_t> plan_assignments(const ClusterPlan& plan) {
    std::vector<std::uint32_t> out(plan.num_tokens());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::uint32_t(plan.cluster_of(i));
    return out;
}

// Cluster map of a raw [C, H, W] feature grid: tokens are the spatial
// positions, keys are their channel vectors.
template <typename T>
std::vector<std::uint32_t> feature_cluster_assignments(const Tensor<T>& features, std::size_t M) {
    if (features.rank() != 3)
        throw std::invalid_argument("feature_cluster_assignments: expected [C, H, W]");
    std::size_t C = features.dim(0), H = features.dim(1), W = features.dim(2);
    Tensor<T> tokens(Shape{H * W, C});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < H * W; ++p) tokens.at(p, c) = features[c * H * W + p];
    ClusterPlan plan = build_cluster_plan(tokens, M);
    return plan_assignments(plan);
}

}  // namespace secvit
