#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "ofs/tensor.hpp"

namespace ofs {

/// A continuous filter size k bracketed by the odd sizes k_minus <= k < k_plus = k_minus + 2.
/// alpha = (k - k_minus) / 2 is the weight of the upper-bound activation.
struct ContinuousFilterSize {
  double k = 1.0;
  int k_minus = 1;
  int k_plus = 3;
  double alpha = 0.0;

  bool operator==(const ContinuousFilterSize&) const = default;
};

inline ContinuousFilterSize bounds_of(double k) {
  if (!(k >= 1.0) || !std::isfinite(k)) {
    throw std::invalid_argument("bounds_of: filter size must be a finite value >= 1, got " +
                                std::to_string(k));
  }
  const int half = static_cast<int>(std::floor((k + 1.0) / 2.0));
  ContinuousFilterSize s;
  s.k = k;
  s.k_plus = half * 2 + 1;
  s.k_minus = half * 2 - 1;
  s.alpha = (k - s.k_minus) / 2.0;
  return s;
}

/// Admissible range for the learned size.
struct SizeClamp {
  double min = 1.0;
  double max = 11.0;
};

inline double clamp_size(double k, const SizeClamp& c) { return std::clamp(k, c.min, c.max); }

/// Grows every filter by one pixel on each side; new ring entries replicate the
/// nearest original entry (index clamping). The inner block is the input unchanged.
inline FilterBank expand_filters(const FilterBank& filters) {
  const std::size_t s = filters.size();
  FilterBank out(filters.out_channels(), filters.in_channels(), s + 2);
  for (std::size_t o = 0; o < filters.out_channels(); ++o) {
    for (std::size_t i = 0; i < filters.in_channels(); ++i) {
      for (std::size_t r = 0; r < s + 2; ++r) {
        const std::size_t sr = std::clamp<std::size_t>(r, 1, s) - 1;
        for (std::size_t c = 0; c < s + 2; ++c) {
          const std::size_t sc = std::clamp<std::size_t>(c, 1, s) - 1;
          out.at(o, i, r, c) = filters.at(o, i, sr, sc);
        }
      }
    }
  }
  return out;
}

/// Zeroes the outer ring, leaving a filter of effective size s - 2 stored at size s.
inline FilterBank shrink_filters(const FilterBank& filters) {
  const std::size_t s = filters.size();
  if (s < 3) {
    throw std::invalid_argument("shrink_filters: cannot shrink a filter of size " +
                                std::to_string(s));
  }
  FilterBank out = filters;
  for (std::size_t o = 0; o < filters.out_channels(); ++o)
    for (std::size_t i = 0; i < filters.in_channels(); ++i)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c)
          if (on_ring(r, c, s)) out.at(o, i, r, c) = 0.0;
  return out;
}

/// The inner (s-2) x (s-2) block as a filter bank of that size.
inline FilterBank crop_filters(const FilterBank& filters) {
  const std::size_t s = filters.size();
  if (s < 3) {
    throw std::invalid_argument("crop_filters: filter of size " + std::to_string(s) +
                                " has no inner block");
  }
  FilterBank out(filters.out_channels(), filters.in_channels(), s - 2);
  for (std::size_t o = 0; o < filters.out_channels(); ++o)
    for (std::size_t i = 0; i < filters.in_channels(); ++i)
      for (std::size_t r = 0; r + 2 < s; ++r)
        for (std::size_t c = 0; c + 2 < s; ++c)
          out.at(o, i, r, c) = filters.at(o, i, r + 1, c + 1);
  return out;
}

/// Places the filters in the center of a bank two pixels larger, with a zero ring.
inline FilterBank zero_pad_filters(const FilterBank& filters) {
  const std::size_t s = filters.size();
  FilterBank out(filters.out_channels(), filters.in_channels(), s + 2);
  for (std::size_t o = 0; o < filters.out_channels(); ++o)
    for (std::size_t i = 0; i < filters.in_channels(); ++i)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c)
          out.at(o, i, r + 1, c + 1) = filters.at(o, i, r, c);
  return out;
}

}  // namespace ofs
