#include <cstdint>
#include <vector>

#include "segrl/errors.hpp"
#include "segrl/perception.hpp"

namespace segrl {

namespace {

void check_kernel(int k) {
  if (k < 1 || k % 2 == 0)
    throw ConfigError("morphology kernel_size must be odd and >= 1");
}

// Bit-packed rows: pixel (i, j) is bit (j % 64) of word (i * wpr + j / 64).
// Shifting in zeros at row edges and treating missing rows as zero words is
// exactly the zero-padding window semantics.
struct PackedMask {
  int height = 0;
  int width = 0;
  int wpr = 0;  // words per row
  std::vector<uint64_t> words;

  explicit PackedMask(const BinaryMask& m)
      : height(m.height), width(m.width), wpr((m.width + 63) / 64) {
    words.assign(static_cast<std::size_t>(height) * wpr, 0);
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j)
        if (m.at(i, j))
          words[static_cast<std::size_t>(i) * wpr + j / 64] |=
              uint64_t{1} << (j % 64);
  }

  BinaryMask unpack() const {
    BinaryMask out;
    out.height = height;
    out.width = width;
    out.data.assign(static_cast<std::size_t>(height) * width, 0);
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j)
        out.data[static_cast<std::size_t>(i) * width + j] =
            (words[static_cast<std::size_t>(i) * wpr + j / 64] >>
             (j % 64)) &
            1;
    return out;
  }
};

// dst = src row shifted by `shift` pixel columns (positive = towards higher
// columns), zeros shifted in.
void shift_row(const uint64_t* src, uint64_t* dst, int wpr, int shift) {
  if (shift == 0) {
    for (int w = 0; w < wpr; ++w) dst[w] = src[w];
    return;
  }
  if (shift > 0) {
    for (int w = wpr - 1; w >= 0; --w) {
      uint64_t v = src[w] << shift;
      if (w > 0) v |= src[w - 1] >> (64 - shift);
      dst[w] = v;
    }
  } else {
    const int s = -shift;
    for (int w = 0; w < wpr; ++w) {
      uint64_t v = src[w] >> s;
      if (w + 1 < wpr) v |= src[w + 1] << (64 - s);
      dst[w] = v;
    }
  }
}

void mask_tail(uint64_t* row, int wpr, int width) {
  const int tail = width % 64;
  if (tail != 0) row[wpr - 1] &= (uint64_t{1} << tail) - 1;
}

PackedMask box_filter(const PackedMask& in, int k, bool take_max) {
  const int r = (k - 1) / 2;
  const int wpr = in.wpr;

  PackedMask horiz = in;
  std::vector<uint64_t> shifted(wpr);
  for (int i = 0; i < in.height; ++i) {
    const uint64_t* src = in.words.data() + static_cast<std::size_t>(i) * wpr;
    uint64_t* dst = horiz.words.data() + static_cast<std::size_t>(i) * wpr;
    for (int w = 0; w < wpr; ++w) dst[w] = src[w];
    for (int d = -r; d <= r; ++d) {
      if (d == 0) continue;
      shift_row(src, shifted.data(), wpr, d);
      if (take_max)
        for (int w = 0; w < wpr; ++w) dst[w] |= shifted[w];
      else
        for (int w = 0; w < wpr; ++w) dst[w] &= shifted[w];
    }
    // Bits at columns >= width must stay zero so erosion sees background
    // beyond the right edge.
    mask_tail(dst, wpr, in.width);
  }

  PackedMask out = horiz;
  for (int i = 0; i < in.height; ++i) {
    uint64_t* dst = out.words.data() + static_cast<std::size_t>(i) * wpr;
    for (int d = -r; d <= r; ++d) {
      if (d == 0) continue;
      const int ii = i + d;
      const bool inside = ii >= 0 && ii < in.height;
      const uint64_t* src =
          inside ? horiz.words.data() + static_cast<std::size_t>(ii) * wpr
                 : nullptr;
      if (take_max) {
        if (inside)
          for (int w = 0; w < wpr; ++w) dst[w] |= src[w];
      } else {
        if (inside)
          for (int w = 0; w < wpr; ++w) dst[w] &= src[w];
        else
          for (int w = 0; w < wpr; ++w) dst[w] = 0;
      }
    }
  }
  return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int kernel_size) {
  check_kernel(kernel_size);
  return box_filter(PackedMask(mask), kernel_size, /*take_max=*/true).unpack();
}

BinaryMask erode(const BinaryMask& mask, int kernel_size) {
  check_kernel(kernel_size);
  return box_filter(PackedMask(mask), kernel_size, /*take_max=*/false).unpack();
}

BinaryMask post_process_mask(const BinaryMask& mask, int kernel_size) {
  check_kernel(kernel_size);
  PackedMask packed(mask);
  PackedMask opened =
      box_filter(box_filter(packed, kernel_size, false), kernel_size, true);
  return box_filter(box_filter(opened, kernel_size, true), kernel_size, false)
      .unpack();
}

InstanceMasks post_process_masks(const InstanceMasks& masks, int kernel_size) {
  InstanceMasks out = masks;
  for (auto& m : out.masks) m = post_process_mask(m, kernel_size);
  return out;
}

}  // namespace segrl
