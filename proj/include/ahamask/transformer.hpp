#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ahamask/graph.hpp"
#include "ahamask/head_mask.hpp"
#include "ahamask/tensor.hpp"

namespace ahamask {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ffn = 512;
  int vocab_size = 64;
  int max_seq_len = 64;
  std::uint64_t seed = 0;

  int d_head() const noexcept { return d_model / n_heads; }
  // Throws ConfigError when the dimensions are inconsistent.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  grad::Tensor ln1_gain, ln1_bias;
  std::vector<grad::Tensor> wq, wk, wv;  // per head, d_model x d_head
  std::vector<grad::Tensor> wo;          // per head, d_head x d_model
  grad::Tensor ln2_gain, ln2_bias;
  grad::Tensor ffn_w1, ffn_b1;  // d_model x d_ffn, d_ffn
  grad::Tensor ffn_w2, ffn_b2;  // d_ffn x d_model, d_model
};

// Pre-layernorm decoder-only transformer with learned absolute positions and
// an output projection tied to the token embedding.
struct ModelWeights {
  ModelConfig config;
  grad::Tensor token_embedding;  // vocab x d_model
  grad::Tensor pos_embedding;    // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  grad::Tensor final_gain, final_bias;

  // Deterministic random initialisation from config.seed.
  static ModelWeights initialize(const ModelConfig& config);
  // Zero-filled tensors of the right shapes (used by the checkpoint loader).
  static ModelWeights allocate(const ModelConfig& config);

  // Every tensor in canonical checkpoint order: token embedding, positional
  // embedding, then per layer ln1 gain/bias, W_Q[0..h), W_K[0..h),
  // W_V[0..h), W_O[0..h), ln2 gain/bias, ffn W1, b1, W2, b2; finally the
  // final layernorm gain/bias.
  std::vector<grad::Tensor*> parameters();
  std::vector<const grad::Tensor*> parameters() const;

  void set_trainable(bool on);
  bool any_trainable() const;
  bool all_finite() const;

  friend bool operator==(const ModelWeights& a, const ModelWeights& b);
};

// Causal scaled dot-product attention for one head, applied to the already
// normalised input x [l x d_model]; returns Y [l x d_head].
grad::Var attention_head(grad::Graph& g, const ModelWeights& model, grad::Var x, int layer,
                         int head);

// Sum over heads of m[layer, head] * Y * W_O. `mask` is an [n_layers x
// n_heads] value on the graph (binary or real); std::nullopt means all ones.
// When the mask carries no gradient, heads with m = 0 are skipped and heads
// with m = 1 are added unscaled; otherwise every head is computed then scaled
// so the gradient reaches masked heads too.
grad::Var masked_mha(grad::Graph& g, const ModelWeights& model, grad::Var x, int layer,
                     std::optional<grad::Var> mask);

// Logits [l x vocab]. Blocks are x + MHA(LN(x)), then x + FFN(LN(x)).
grad::Var forward(grad::Graph& g, const ModelWeights& model, std::span<const int> tokens,
                  std::optional<grad::Var> mask = std::nullopt);

// Convenience wrappers that build a throwaway graph.
grad::Tensor forward_logits(const ModelWeights& model, std::span<const int> tokens,
                            const HeadMask* mask = nullptr);
grad::Tensor forward_logits(const ModelWeights& model, std::span<const int> tokens,
                            const SoftMask& mask);

// Puts a mask on a graph as a constant [n x h] tensor.
grad::Var mask_constant(grad::Graph& g, const HeadMask& mask);
grad::Var mask_constant(grad::Graph& g, const SoftMask& mask);

// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> row);

// Greedy decoding: append the argmax token until `stop_token` is produced or
// `max_new` tokens have been generated. The result holds only generated
// tokens (including the stop token when emitted). Runs incrementally with
// cached keys and values.
std::vector<int> greedy_decode(const ModelWeights& model, const HeadMask* mask,
                               std::span<const int> prompt, int max_new, int stop_token);
// Same result, recomputing the full forward pass for every new token.
std::vector<int> greedy_decode_uncached(const ModelWeights& model, const HeadMask* mask,
                                        std::span<const int> prompt, int max_new, int stop_token);

// True iff greedy decoding from `prompt` would emit exactly `expected`. Uses a
// single teacher-forced pass: each row of the causal forward equals the
// corresponding incremental decoding step bit for bit.
bool greedy_matches(const ModelWeights& model, const HeadMask* mask,
                    std::span<const int> prompt, std::span<const int> expected);

}  // namespace ahamask
