#include "epilnet/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include <json.hpp>
#include <unistd.h>

namespace epilnet {

using nlohmann::json;

std::string to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::io: return "io";
    case CheckpointErrorKind::bad_magic: return "bad_magic";
    case CheckpointErrorKind::version_mismatch: return "version_mismatch";
    case CheckpointErrorKind::malformed_header: return "malformed_header";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::trailing_bytes: return "trailing_bytes";
    case CheckpointErrorKind::digest_mismatch: return "digest_mismatch";
  }
  return "unknown";
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::vector<std::uint8_t> encode_payload(const EpilNet<float>& model) {
  const auto blob = model.flatten();
  std::vector<std::uint8_t> out(blob.size() * 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(blob[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

std::string model_digest(const EpilNet<float>& model) { return "sha256:" + sha256_hex(encode_payload(model)); }

namespace {

json manifest_json(const std::vector<ManifestEntry>& manifest) {
  json out = json::array();
  for (const auto& e : manifest)
    out.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"trainable", e.trainable}});
  return out;
}

std::vector<float> decode_floats(std::span<const std::uint8_t> payload) {
  std::vector<float> out(payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

std::string save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto payload = encode_payload(checkpoint.model);
  const std::string digest = "sha256:" + sha256_hex(payload);
  const auto& cfg = checkpoint.model.config();
  const auto& meta = checkpoint.metadata;

  json header;
  header["format"] = kCheckpointMagic;
  header["format_version"] = {{"major", kCheckpointMajor}, {"minor", kCheckpointMinor}};
  header["architecture"] = {{"name", "epilnet"},
                            {"class_count", cfg.class_count},
                            {"width_multiplier", cfg.width_multiplier},
                            {"init_seed", cfg.seed},
                            {"input_length", kWindowLength},
                            {"stage_repeats", kStageRepeats},
                            {"stage_widths", cfg.stage_widths()}};
  header["group_mode"] = to_string(meta.group_mode);
  header["class_names"] = meta.class_names;
  header["norm"] = {{"mean", checkpoint.norm.mean}, {"std", checkpoint.norm.std}};
  header["seed"] = meta.seed;
  header["created"] = {{"at", meta.created_at}, {"best_epoch", meta.best_epoch}, {"val_accuracy", meta.val_accuracy}};
  header["extra"] = meta.extra;
  header["manifest"] = manifest_json(checkpoint.model.manifest());
  header["payload"] = {{"dtype", "float32"}, {"endianness", "little"}, {"bytes", payload.size()}, {"digest", digest}};
  const std::string text = header.dump(1);

  const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot write " + tmp);
    out << kCheckpointMagic << '\n' << text.size() << '\n' << text << '\n';
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw CheckpointError(CheckpointErrorKind::io, "write failed for " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw CheckpointError(CheckpointErrorKind::io, "cannot rename into " + path.string() + ": " + ec.message());
  }
  return digest;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const std::string_view all(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  if (all.size() < magic.size()) {
    if (magic.starts_with(all)) throw CheckpointError(CheckpointErrorKind::truncated, "file ends inside the magic");
    throw CheckpointError(CheckpointErrorKind::bad_magic, "not an EPNT checkpoint");
  }
  if (all.substr(0, magic.size()) != magic) {
    if (all.starts_with("EPNT")) throw CheckpointError(CheckpointErrorKind::version_mismatch, "unsupported magic " + std::string(all.substr(0, 5)));
    throw CheckpointError(CheckpointErrorKind::bad_magic, "not an EPNT checkpoint");
  }
  std::size_t pos = magic.size();
  const auto nl = all.find('\n', pos);
  if (nl == std::string_view::npos) throw CheckpointError(CheckpointErrorKind::truncated, "file ends before the header length");
  std::size_t header_len = 0;
  const auto len_text = all.substr(pos, nl - pos);
  const auto [ptr, ec] = std::from_chars(len_text.data(), len_text.data() + len_text.size(), header_len);
  if (ec != std::errc() || ptr != len_text.data() + len_text.size() || len_text.empty())
    throw CheckpointError(CheckpointErrorKind::malformed_header, "bad header length '" + std::string(len_text) + "'");
  pos = nl + 1;
  if (all.size() < pos + header_len + 1) throw CheckpointError(CheckpointErrorKind::truncated, "file ends inside the header");
  if (all[pos + header_len] != '\n') throw CheckpointError(CheckpointErrorKind::malformed_header, "header not terminated by newline");

  json header;
  try {
    header = json::parse(all.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::malformed_header, e.what());
  }
  pos += header_len + 1;

  Checkpoint out;
  std::size_t payload_bytes = 0;
  std::string digest;
  ModelConfig cfg;
  try {
    const int major = header.at("format_version").at("major").get<int>();
    if (major != kCheckpointMajor)
      throw CheckpointError(CheckpointErrorKind::version_mismatch,
                            "format major " + std::to_string(major) + " (supported: " + std::to_string(kCheckpointMajor) + ")");
    const auto& arch = header.at("architecture");
    cfg.class_count = arch.at("class_count").get<std::size_t>();
    cfg.width_multiplier = arch.at("width_multiplier").get<double>();
    cfg.seed = arch.at("init_seed").get<std::uint64_t>();
    out.norm = {header.at("norm").at("mean").get<double>(), header.at("norm").at("std").get<double>()};
    auto& meta = out.metadata;
    meta.group_mode = parse_group_mode(header.at("group_mode").get<std::string>());
    meta.class_names = header.at("class_names").get<std::vector<std::string>>();
    meta.seed = header.at("seed").get<std::uint64_t>();
    meta.created_at = header.at("created").at("at").get<std::string>();
    meta.best_epoch = header.at("created").at("best_epoch").get<std::size_t>();
    meta.val_accuracy = header.at("created").at("val_accuracy").get<double>();
    meta.extra = header.at("extra").get<std::map<std::string, std::string>>();
    payload_bytes = header.at("payload").at("bytes").get<std::size_t>();
    digest = header.at("payload").at("digest").get<std::string>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorKind::malformed_header, e.what());
  }

  const std::size_t available = all.size() - pos;
  if (available < payload_bytes)
    throw CheckpointError(CheckpointErrorKind::truncated, "payload has " + std::to_string(available) + " of " +
                                                              std::to_string(payload_bytes) + " bytes");
  if (available > payload_bytes)
    throw CheckpointError(CheckpointErrorKind::trailing_bytes, std::to_string(available - payload_bytes) + " bytes after payload");
  const auto payload = bytes.subspan(pos, payload_bytes);
  const std::string actual = "sha256:" + sha256_hex(payload);
  if (actual != digest) throw CheckpointError(CheckpointErrorKind::digest_mismatch, "header says " + digest + ", payload is " + actual);

  try {
    out.model = EpilNet<float>::build(cfg);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorKind::malformed_header, std::string("architecture: ") + e.what());
  }
  if (manifest_json(out.model.manifest()) != header.at("manifest"))
    throw CheckpointError(CheckpointErrorKind::malformed_header, "manifest does not match the architecture");
  if (payload_bytes != out.model.blob_size() * 4)
    throw CheckpointError(CheckpointErrorKind::malformed_header, "payload size does not match the manifest");
  out.model.load_flat(decode_floats(payload));
  out.digest = actual;
  return out;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace epilnet
