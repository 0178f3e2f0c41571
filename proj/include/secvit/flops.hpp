#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace secvit::flops {

// Multiply-add accounting, split by where the work happens. "core" is the
// attention score and value contractions; everything else is bookkeeping
// around them.
enum class Cat : int { scores = 0, values, proj, conv, ffn, other, count_ };

inline constexpr int kNumCats = int(Cat::count_);

inline const char* cat_name(Cat c) {
    switch (c) {
        case Cat::scores: return "attn_scores";
        case Cat::values: return "attn_values";
        case Cat::proj: return "projections";
        case Cat::conv: return "conv";
        case Cat::ffn: return "ffn";
        default: return "other";
    }
}

struct Counter {
    std::array<std::uint64_t, kNumCats> macs{};

    void reset() { macs.fill(0); }
    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto m : macs) s += m;
        return s;
    }
    // Attention-core multiply-adds: scores + values.
    std::uint64_t core() const { return macs[int(Cat::scores)] + macs[int(Cat::values)]; }
    std::uint64_t core_flops() const { return 2 * core(); }
};

namespace detail {
inline Counter*& active() {
    thread_local Counter* c = nullptr;
    return c;
}
inline Cat& category() {
    thread_local Cat c = Cat::other;
    return c;
}
}  // namespace detail

inline void set_counter(Counter* c) { detail::active() = c; }
inline Counter* counter() { return detail::active(); }

inline void add_macs(std::uint64_t n) {
    if (Counter* c = detail::active()) c->macs[int(detail::category())] += n;
}

// Scoped category tag for the contractions issued inside the region.
struct Region {
    explicit Region(Cat c) : prev_(detail::category()) { detail::category() = c; }
    ~Region() { detail::category() = prev_; }
    Region(const Region&) = delete;
    Region& operator=(const Region&) = delete;

private:
    Cat prev_;
};

}  // namespace secvit::flops
