#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aoept/rng.hpp"

namespace aoept {

struct ModalitySpec {
  std::string name;
  std::size_t vocab = 32;    // regular token ids are [0, vocab); id == vocab is the
                             // reserved placeholder for the missing modality
  std::size_t seq_len = 8;
};

std::vector<ModalitySpec> default_modalities(std::size_t count = 2);

// One labeled multimodal token instance. Token lists are always full length;
// a missing modality is represented by placeholder ids, never by truncation.
struct Sample {
  std::size_t id = 0;
  std::vector<std::vector<std::size_t>> tokens;  // per modality
  std::size_t label = 0;
  std::uint32_t missing_mask = 0;  // bit m set <=> modality m missing
};

bool modality_missing(const Sample& s, std::size_t m);
std::string pattern_name(std::uint32_t mask, const std::vector<ModalitySpec>& modalities);
std::uint32_t parse_pattern(const std::string& name, const std::vector<ModalitySpec>& modalities);

struct GenConfig {
  std::size_t n_train = 256;
  std::size_t n_val = 96;
  std::size_t n_test = 256;
  std::size_t num_classes = 4;
  std::vector<ModalitySpec> modalities = default_modalities();
  // Cross-modal correlation: with probability rho every modality is keyed by
  // the label directly; otherwise modality 0 is keyed by (label + z) and the
  // rest by z for a per-sample latent z, so only the joint recovers the label.
  double rho = 0.9;
  std::vector<double> token_noise = {0.1, 0.45};  // per modality
  std::uint64_t seed = 1;
};

struct DatasetSplits {
  std::vector<Sample> train, val, test;
};

DatasetSplits generate_synthetic(const GenConfig& cfg);

// Deterministic per-sample assignment of missing patterns. kind is a modality
// name (that modality is missing for eta% of samples) or "both" (dual-modal
// only: eta/2% text-only plus eta/2% image-only). Counts use floor for each
// missing group; the remainder stays complete.
struct MissingTable {
  double eta = 0.0;  // percent
  std::string kind = "both";
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> assignments;  // indexed by sample id

  std::uint32_t pattern_for(std::size_t id) const;
};

MissingTable build_missing_table(std::size_t n, double eta, const std::string& kind, std::uint64_t seed,
                                 const std::vector<ModalitySpec>& modalities);

// Replaces every token of each missing modality by that modality's reserved
// placeholder id. Observed modalities and the label are untouched. Idempotent.
Sample apply_missing(const Sample& s, std::uint32_t missing_mask, const std::vector<ModalitySpec>& modalities);

std::vector<Sample> apply_table(const std::vector<Sample>& samples, const MissingTable& table,
                                const std::vector<ModalitySpec>& modalities);

// JSON-lines dataset file, one {id, <modality>..., label} object per line.
void save_dataset_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples,
                        const std::vector<ModalitySpec>& modalities);
std::vector<Sample> load_dataset_jsonl(const std::filesystem::path& path,
                                       const std::vector<ModalitySpec>& modalities);

void save_missing_table(const std::filesystem::path& path, const MissingTable& table,
                        const std::vector<ModalitySpec>& modalities);
MissingTable load_missing_table(const std::filesystem::path& path, const std::vector<ModalitySpec>& modalities);

}  // namespace aoept
