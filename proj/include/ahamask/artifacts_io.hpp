#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ahamask/head_mask.hpp"
#include "ahamask/maskgate.hpp"
#include "ahamask/tasks.hpp"
#include "ahamask/trainer.hpp"
#include "ahamask/transformer.hpp"

namespace ahamask::io {

// Mask file layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "AHAM"
//   4       1     format version (1)
//   5       1     kind: 0 = binary mask, 1 = real-valued logits
//   6       2     n_layers (u16)
//   8       2     n_heads  (u16)
//   10      ...   payload
//
// Binary payload: ceil(n_layers * n_heads / 8) bytes, head (l, h) at flat
// index l * n_heads + h, bit (index % 8) of byte (index / 8), unused high
// bits of the final byte zero. Logit payload: n_layers * n_heads IEEE-754
// doubles in the same order.
//
// Example: the 2x2 mask 10/11 (flat bits 1,0,1,1) encodes to
//   41 48 41 4D 01 00 02 00 02 00 0D
// where 0x0D = 0b00001101.
enum class MaskKind : std::uint8_t { binary = 0, logits = 1 };

inline constexpr std::uint8_t kMaskVersion = 1;
inline constexpr std::uint8_t kCheckpointVersion = 1;

using Bytes = std::vector<std::uint8_t>;

Bytes encode_mask(const HeadMask& mask);
Bytes encode_logits(const MaskLogits& logits);
// Throw FormatError whose code distinguishes bad magic, unsupported version,
// kind mismatch, truncation, nonzero padding bits and trailing bytes.
HeadMask decode_mask(const Bytes& bytes);
MaskLogits decode_logits(const Bytes& bytes);

// Checkpoint layout: magic "AHCKPT", version u8, then the model config as
// u32 n_layers, n_heads, d_model, d_ffn, vocab_size, max_seq_len and u64
// seed, a u32 tensor count, then each parameter tensor (canonical order) as
// a u64 element count followed by that many f64 values.
Bytes encode_checkpoint(const ModelWeights& weights);
ModelWeights decode_checkpoint(const Bytes& bytes);

// Writes through a sibling temporary file and renames it into place, so a
// reader never observes a partial file.
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
Bytes read_file(const std::filesystem::path& path);  // MissingArtifactError if absent
std::string read_text(const std::filesystem::path& path);

void save_mask(const std::filesystem::path& path, const HeadMask& mask);
HeadMask load_mask(const std::filesystem::path& path);
void save_logits(const std::filesystem::path& path, const MaskLogits& logits);
MaskLogits load_logits(const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& weights);
ModelWeights load_checkpoint(const std::filesystem::path& path);

// Evaluation reports as newline-delimited JSON. The first line is a header
//   {"format":"ahamask-eval-report","version":1}
// and every further line holds one report with the fields task, mask_source,
// accuracy, token_error_rate, ifr (composite tasks only), sub_metrics,
// active_head_count and n_examples. Reals carry 6 significant digits.
std::string render_reports(const std::vector<EvalReport>& reports);
std::vector<EvalReport> parse_reports(const std::string& text);
void write_report(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
std::vector<EvalReport> read_reports(const std::filesystem::path& path);

// One JSON object per line with fields step, loss_ce, penalty,
// active_head_count, tau, lr, status.
std::string render_train_records(const std::vector<TrainRecord>& records);
std::vector<TrainRecord> parse_train_records(const std::string& text);

// One JSON object per line with fields task, input, instruction, target
// (token id arrays).
std::string render_corpus(const std::vector<Example>& examples);

double round_sig6(double v);

}  // namespace ahamask::io
