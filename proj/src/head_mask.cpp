#include "ahamask/head_mask.hpp"

#include <algorithm>

#include "ahamask/error.hpp"

namespace ahamask {

HeadMask::HeadMask(int layers, int heads, bool value) : layers_(layers), heads_(heads) {
  if (layers <= 0 || heads <= 0) throw DimensionError("HeadMask needs positive dimensions");
  bits_.assign(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads), value ? 1 : 0);
}

HeadMask::HeadMask(int layers, int heads, std::vector<std::uint8_t> bits)
    : layers_(layers), heads_(heads), bits_(std::move(bits)) {
  if (layers <= 0 || heads <= 0) throw DimensionError("HeadMask needs positive dimensions");
  if (bits_.size() != static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads)) {
    throw DimensionError("HeadMask bit count does not match its shape");
  }
  for (auto& b : bits_) {
    if (b > 1) throw ContractError("HeadMask bits must be 0 or 1");
  }
}

std::size_t HeadMask::index(int layer, int head) const {
  if (layer < 0 || layer >= layers_ || head < 0 || head >= heads_) {
    throw DimensionError("HeadMask index out of range");
  }
  return static_cast<std::size_t>(layer) * static_cast<std::size_t>(heads_) +
         static_cast<std::size_t>(head);
}

std::size_t HeadMask::popcount() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string HeadMask::to_string() const {
  std::string s;
  for (int i = 0; i < layers_; ++i) {
    if (i) s += '/';
    for (int j = 0; j < heads_; ++j) s += (*this)(i, j) ? '1' : '0';
  }
  return s;
}

}  // namespace ahamask
