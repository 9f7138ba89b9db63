#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "activemark/stats.hpp"
#include "activemark/toy_vfm.hpp"
#include "activemark/trainer.hpp"
#include "activemark/verify.hpp"

namespace activemark {

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Where a checkpoint came from: the base seed plus the transforms applied since.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::vector<std::string> lineage;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct LoadedCheckpoint {
  ToyVfm model;
  CheckpointMeta meta;
};

/// "AMCK", u32 version, u64 header length, JSON header, u64 payload length,
/// little-endian f64 parameters in declaration order, u64 FNV-1a of the payload.
std::string encode_checkpoint(const ToyVfm& model, const CheckpointMeta& meta);
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ToyVfm& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------- keys

/// "AMKY", u32 version, u64 header length, JSON header (triggers, messages, widths),
/// u64 payload length, encoder then decoder parameters, u64 FNV-1a of header and payload.
std::string encode_key(const WatermarkKey& key);
WatermarkKey decode_key(std::string_view bytes);

void save_key(const std::filesystem::path& path, const WatermarkKey& key);
WatermarkKey load_key(const std::filesystem::path& path);

/// Rebuilds the trigger images a key refers to and checks each digest.
/// Relative file paths resolve against `base_dir`.
std::vector<Tensor> load_triggers(const WatermarkKey& key, const std::filesystem::path& base_dir = {});

// ---------------------------------------------------------------- reports

nlohmann::json report_to_json(const VerificationReport& report);
VerificationReport report_from_json(const nlohmann::json& j);

void save_report(const std::filesystem::path& path, const VerificationReport& report);
VerificationReport load_report(const std::filesystem::path& path);

nlohmann::json policy_to_json(const DecisionPolicy& policy);
DecisionPolicy policy_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------- CSV

std::string profile_csv(const ActivationProfile& profile);
std::string history_csv(std::span<const HistoryRow> history);
std::string distances_csv(std::span<const std::size_t> distances, std::size_t tau);
std::string curve_csv(std::span<const double> curve);

// ---------------------------------------------------------------- manifests

struct ManifestEntry {
  std::string id;
  std::string kind;
  nlohmann::json params = nlohmann::json::object();
  std::string checkpoint_path;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::string encode_manifest(std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> decode_manifest(std::string_view text);

/// Writes JSON text (sorted keys, two-space indent, trailing newline) atomically.
void save_json(const std::filesystem::path& path, const nlohmann::json& j);
/// FormatError on malformed JSON, IoError on a missing file.
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace activemark
