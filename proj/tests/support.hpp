#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <torch/torch.h>

#include "doctest.h"
#include "sbgan/data.hpp"
#include "sbgan/errors.hpp"

namespace testing {

#define CHECK_THROWS_KIND(expr, k)                       \
  do {                                                   \
    bool caught_ = false;                                \
    try {                                                \
      (void)(expr);                                      \
    } catch (const sbgan::Error& e_) {                   \
      caught_ = true;                                    \
      CHECK_MESSAGE(e_.kind() == (k), e_.what());        \
    }                                                    \
    CHECK_MESSAGE(caught_, "expected sbgan::Error");     \
  } while (0)

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sbgan_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

// Per-pixel class probabilities of the layout rules, computed exactly.
// A pixel ends up with the class of the last rule that paints it, and the
// rules draw independently, so
//   P(class c at p) = P(rule c paints p) * prod_{later r} (1 - P(r paints p)).
inline long round_frac(double f, std::int64_t n) { return std::lround(f * static_cast<double>(n)); }

inline double cover_prob(std::int64_t pos, long start_lo, long start_hi, long len_lo, long len_hi) {
  // start ~ U{start_lo..start_hi}, len ~ max(1, U{len_lo..len_hi}), pos in [start, start + len)
  if (start_hi < start_lo) start_hi = start_lo;
  if (len_hi < len_lo) len_hi = len_lo;
  double total = 0.0;
  const double ns = static_cast<double>(start_hi - start_lo + 1), nl = static_cast<double>(len_hi - len_lo + 1);
  for (long s = start_lo; s <= start_hi; ++s) {
    for (long l = len_lo; l <= len_hi; ++l) {
      const long len = std::max(1L, l);
      if (pos >= s && pos < s + len) total += 1.0;
    }
  }
  return total / (ns * nl);
}

inline std::vector<double> analytic_class_frequencies(const sbgan::data::ToyWorldSpec& spec) {
  const auto H = spec.height, W = spec.width;
  std::vector<double> freq(spec.num_classes, 0.0);
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      std::vector<std::pair<int, double>> paint;
      for (const auto& rule : spec.rules) {
        if (const auto* b = std::get_if<sbgan::data::BandRule>(&rule)) {
          long lo = round_frac(b->top_min, H), hi = std::max(lo, round_frac(b->top_max, H));
          double p = 0.0;
          for (long t = lo; t <= hi; ++t) p += (t <= i) ? 1.0 : 0.0;
          paint.emplace_back(b->cls, p / static_cast<double>(hi - lo + 1));
        } else {
          const auto& r = std::get<sbgan::data::RectRule>(rule);
          const double pr = cover_prob(i, round_frac(r.top_min, H), round_frac(r.top_max, H),
                                       round_frac(r.height_min, H), round_frac(r.height_max, H));
          const double pc = cover_prob(j, round_frac(r.left_min, W), round_frac(r.left_max, W),
                                       round_frac(r.width_min, W), round_frac(r.width_max, W));
          paint.emplace_back(r.cls, r.presence * pr * pc);
        }
      }
      double untouched = 1.0;
      for (auto it = paint.rbegin(); it != paint.rend(); ++it) {
        freq[it->first] += untouched * it->second;
        untouched *= 1.0 - it->second;
      }
      freq[0] += untouched;
    }
  }
  for (auto& f : freq) f /= static_cast<double>(H * W);
  return freq;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) tv += std::abs(p[k] - q[k]);
  return 0.5 * tv;
}

}  // namespace testing
