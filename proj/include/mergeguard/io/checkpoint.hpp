#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mergeguard/nn/model.hpp"
#include "mergeguard/trojan/dataset.hpp"

namespace mergeguard::io {

// Container layout, all integers little-endian:
//   0  "MGCK"
//   4  u32 format version
//   8  u64 header length (bytes of UTF-8 JSON)
//  16  u64 payload length
//  24  u32 CRC-32 of header and payload
//  28  header JSON, then payload
// The header lists every blob with its byte offset into the payload. Blob
// dtypes are "f32" (IEEE-754 binary32), "i32" and "u8".
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kFixedHeaderBytes = 28;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string note;
};

std::string encode_model(const nn::Model& model, const CheckpointMeta& meta = {});
std::string encode_dataset(const trojan::LabeledImageSet& set, const CheckpointMeta& meta = {});

/// Integrity (magic, version, lengths, checksum) is verified before the
/// header is parsed. Throws CorruptionError or VersionError.
nn::Model decode_model(std::string_view bytes, CheckpointMeta* meta = nullptr);
trojan::LabeledImageSet decode_dataset(std::string_view bytes, CheckpointMeta* meta = nullptr);

/// File wrappers; I/O failures raise IngestionError naming the path, and
/// decode errors are prefixed with it.
void save_checkpoint(const nn::Model& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});
nn::Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

void save_dataset(const trojan::LabeledImageSet& set, const std::filesystem::path& path,
                  const CheckpointMeta& meta = {});
trojan::LabeledImageSet load_dataset(const std::filesystem::path& path,
                                     CheckpointMeta* meta = nullptr);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never see a
/// partial file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mergeguard::io
