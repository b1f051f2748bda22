#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ahamask {

// Binary n_layers x n_heads selection of attention heads, layer-major.
class HeadMask {
 public:
  HeadMask() = default;
  HeadMask(int layers, int heads, bool value = true);
  HeadMask(int layers, int heads, std::vector<std::uint8_t> bits);

  static HeadMask all_ones(int layers, int heads) { return HeadMask(layers, heads, true); }
  static HeadMask zeros(int layers, int heads) { return HeadMask(layers, heads, false); }

  int layers() const noexcept { return layers_; }
  int heads() const noexcept { return heads_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool operator()(int layer, int head) const { return bits_[index(layer, head)] != 0; }
  void set(int layer, int head, bool on) { bits_[index(layer, head)] = on ? 1 : 0; }
  bool at(std::size_t flat) const { return bits_.at(flat) != 0; }
  void set_flat(std::size_t flat, bool on) { bits_.at(flat) = on ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  std::size_t popcount() const noexcept;
  bool same_shape(const HeadMask& o) const noexcept {
    return layers_ == o.layers_ && heads_ == o.heads_;
  }
  // Rows of '0'/'1' separated by '/', e.g. "1011/0110".
  std::string to_string() const;

  friend bool operator==(const HeadMask&, const HeadMask&) = default;

 private:
  std::size_t index(int layer, int head) const;

  int layers_ = 0;
  int heads_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Relaxed mask values; mathematically in (0, 1), although the sigmoid can
// round to an endpoint in double precision for large |logit / tau|.
struct SoftMask {
  int layers = 0;
  int heads = 0;
  std::vector<double> values;
};

}  // namespace ahamask
