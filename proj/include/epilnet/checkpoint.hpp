#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilnet/data.hpp"
#include "epilnet/model.hpp"

namespace epilnet {

inline constexpr char kCheckpointMagic[] = "EPNT1";
inline constexpr int kCheckpointMajor = 1;
inline constexpr int kCheckpointMinor = 0;

struct CheckpointMetadata {
  GroupMode group_mode = GroupMode::five_class;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::string created_at;  // ISO-8601, informational only
  std::size_t best_epoch = 0;
  double val_accuracy = 0.0;
  std::map<std::string, std::string> extra;
};

struct Checkpoint {
  EpilNet<float> model;
  NormStats norm;
  CheckpointMetadata metadata;
  std::string digest;  // "sha256:<hex>" of the payload; filled by save/load
};

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, malformed_header, truncated, trailing_bytes, digest_mismatch };

std::string to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& message)
      : std::runtime_error(to_string(kind) + ": " + message), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Little-endian float32 parameter blob in manifest order.
std::vector<std::uint8_t> encode_payload(const EpilNet<float>& model);

/// "sha256:<hex>" over encode_payload(model).
std::string model_digest(const EpilNet<float>& model);

/// Layout: "EPNT1\n", decimal header byte count, "\n", JSON header, "\n", payload.
/// Written to a temporary sibling and renamed into place. Returns the digest.
std::string save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace epilnet
