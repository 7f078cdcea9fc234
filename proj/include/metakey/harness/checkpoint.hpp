#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metakey/baseline/baseline.hpp"
#include "metakey/metacore/meta_state.hpp"

namespace metakey::harness {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind { meta, baseline };
std::string_view to_string(CheckpointKind k);

/// Unit of selection and evaluation. Exactly one of `meta` / `baseline` is
/// set, matching `kind`. The single validation loss is measured on the
/// training domain; nothing else about validation is stored.
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::meta;
  std::string mode;
  /// Completed episodes (meta) or epochs (baseline).
  std::int64_t index = 0;
  double val_loss = 0.0;
  std::vector<std::string> val_seasons;
  std::string fingerprint;
  kpnet::ModelConfig model;
  baseline::BaselineConfig baseline_config;
  std::optional<metacore::MetaState> meta;
  std::optional<baseline::BaselineState> baseline;

  const kpnet::ModelWeights& weights() const;
  /// Bitwise comparison of every array and metadata field.
  bool identical(const Checkpoint& other) const;
};

/// Writes atomically (temporary file, then rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a bad magic, version, checksum, truncation or
/// inconsistent contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Encoded container bytes; save_checkpoint writes exactly these.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");

}  // namespace metakey::harness
