#include "aoept/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace aoept {

using nlohmann::json;

std::vector<ModalitySpec> default_modalities(std::size_t count) {
  std::vector<ModalitySpec> mods = {{"text", 32, 8}, {"image", 32, 8}, {"audio", 32, 8}};
  if (count < 2 || count > mods.size()) throw std::invalid_argument("default_modalities: count must be 2 or 3");
  mods.resize(count);
  return mods;
}

bool modality_missing(const Sample& s, std::size_t m) { return (s.missing_mask >> m) & 1u; }

std::string pattern_name(std::uint32_t mask, const std::vector<ModalitySpec>& modalities) {
  if (mask == 0) return "complete";
  std::string joined;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    if ((mask >> m) & 1u) {
      if (!joined.empty()) joined += "+";
      joined += modalities[m].name;
    }
  }
  return joined + "_missing";
}

std::uint32_t parse_pattern(const std::string& name, const std::vector<ModalitySpec>& modalities) {
  if (name == "complete") return 0;
  const std::string suffix = "_missing";
  if (name.size() <= suffix.size() || name.substr(name.size() - suffix.size()) != suffix) {
    throw std::invalid_argument("parse_pattern: bad pattern '" + name + "'");
  }
  std::uint32_t mask = 0;
  std::stringstream ss(name.substr(0, name.size() - suffix.size()));
  std::string part;
  while (std::getline(ss, part, '+')) {
    bool found = false;
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (modalities[m].name == part) {
        mask |= 1u << m;
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("parse_pattern: unknown modality '" + part + "'");
  }
  return mask;
}

namespace {

void validate(const GenConfig& cfg) {
  if (cfg.modalities.size() < 2) throw std::invalid_argument("GenConfig: need at least 2 modalities");
  if (cfg.num_classes < 2) throw std::invalid_argument("GenConfig: need at least 2 classes");
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw std::invalid_argument("GenConfig: rho must be in [0,1]");
  if (cfg.token_noise.size() != cfg.modalities.size()) {
    throw std::invalid_argument("GenConfig: token_noise must list one rate per modality");
  }
  for (const ModalitySpec& m : cfg.modalities) {
    if (m.vocab % cfg.num_classes != 0) {
      throw std::invalid_argument("GenConfig: vocab of " + m.name + " must be divisible by num_classes");
    }
    if (m.seq_len == 0) throw std::invalid_argument("GenConfig: seq_len must be >= 1");
  }
}

// Balanced label assignment, then shuffled: per-split marginals stay within
// one sample of uniform.
std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  rng.shuffle(labels);
  return labels;
}

std::vector<Sample> make_split(const GenConfig& cfg, std::size_t n, std::size_t id_base, Rng& rng) {
  const std::size_t c = cfg.num_classes;
  std::vector<std::size_t> labels = balanced_labels(n, c, rng);
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = out[i];
    s.id = id_base + i;
    s.label = labels[i];
    const bool aligned = rng.uniform01() <= cfg.rho;
    const std::size_t z = aligned ? 0 : rng.bounded(c);
    s.tokens.resize(cfg.modalities.size());
    for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
      const ModalitySpec& spec = cfg.modalities[m];
      const std::size_t block = spec.vocab / c;
      std::size_t key;
      if (aligned) {
        key = s.label;
      } else {
        key = m == 0 ? (s.label + z) % c : z;
      }
      s.tokens[m].resize(spec.seq_len);
      for (std::size_t t = 0; t < spec.seq_len; ++t) {
        if (rng.uniform01() <= cfg.token_noise[m]) {
          s.tokens[m][t] = rng.bounded(spec.vocab);
        } else {
          s.tokens[m][t] = key * block + rng.bounded(block);
        }
      }
    }
  }
  return out;
}

}  // namespace

DatasetSplits generate_synthetic(const GenConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  DatasetSplits out;
  out.train = make_split(cfg, cfg.n_train, 0, rng);
  out.val = make_split(cfg, cfg.n_val, cfg.n_train, rng);
  out.test = make_split(cfg, cfg.n_test, cfg.n_train + cfg.n_val, rng);
  return out;
}

std::uint32_t MissingTable::pattern_for(std::size_t id) const {
  if (id >= assignments.size()) throw std::out_of_range("MissingTable: sample id out of range");
  return assignments[id];
}

MissingTable build_missing_table(std::size_t n, double eta, const std::string& kind, std::uint64_t seed,
                                 const std::vector<ModalitySpec>& modalities) {
  if (!(eta >= 0.0 && eta <= 100.0)) {
    throw std::invalid_argument("build_missing_table: eta must be in [0,100], got " + std::to_string(eta));
  }
  std::vector<std::pair<std::uint32_t, std::size_t>> groups;  // (mask, count)
  if (kind == "both") {
    if (modalities.size() != 2) throw std::invalid_argument("build_missing_table: kind 'both' needs 2 modalities");
    const std::size_t each = static_cast<std::size_t>(eta / 200.0 * static_cast<double>(n));
    groups = {{1u << 0, each}, {1u << 1, each}};
  } else {
    std::uint32_t mask = 0;
    for (std::size_t m = 0; m < modalities.size(); ++m) {
      if (modalities[m].name == kind) mask = 1u << m;
    }
    if (mask == 0) throw std::invalid_argument("build_missing_table: unknown kind '" + kind + "'");
    const std::size_t count = static_cast<std::size_t>(eta / 100.0 * static_cast<double>(n));
    groups = {{mask, count}};
  }

  MissingTable table;
  table.eta = eta;
  table.kind = kind;
  table.seed = seed;
  table.assignments.assign(n, 0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t next = 0;
  for (const auto& [mask, count] : groups) {
    for (std::size_t i = 0; i < count; ++i) table.assignments[order[next++]] = mask;
  }
  return table;
}

Sample apply_missing(const Sample& s, std::uint32_t missing_mask, const std::vector<ModalitySpec>& modalities) {
  if (s.tokens.size() != modalities.size()) throw std::invalid_argument("apply_missing: modality count mismatch");
  Sample out = s;
  out.missing_mask = missing_mask;
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    if ((missing_mask >> m) & 1u) {
      std::fill(out.tokens[m].begin(), out.tokens[m].end(), modalities[m].vocab);
    }
  }
  return out;
}

std::vector<Sample> apply_table(const std::vector<Sample>& samples, const MissingTable& table,
                                const std::vector<ModalitySpec>& modalities) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back(apply_missing(samples[i], table.pattern_for(i), modalities));
  }
  return out;
}

void save_dataset_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples,
                        const std::vector<ModalitySpec>& modalities) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_dataset_jsonl: cannot open " + path.string());
  for (const Sample& s : samples) {
    json line;
    line["id"] = s.id;
    for (std::size_t m = 0; m < modalities.size(); ++m) line[modalities[m].name] = s.tokens[m];
    line["label"] = s.label;
    f << line.dump() << "\n";
  }
}

std::vector<Sample> load_dataset_jsonl(const std::filesystem::path& path,
                                       const std::vector<ModalitySpec>& modalities) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_dataset_jsonl: cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Sample s;
    s.id = j.at("id").get<std::size_t>();
    s.label = j.at("label").get<std::size_t>();
    for (const ModalitySpec& m : modalities) {
      s.tokens.push_back(j.at(m.name).get<std::vector<std::size_t>>());
      if (s.tokens.back().size() != m.seq_len) {
        throw std::runtime_error("load_dataset_jsonl: token list length mismatch for " + m.name);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_missing_table(const std::filesystem::path& path, const MissingTable& table,
                        const std::vector<ModalitySpec>& modalities) {
  json j;
  j["eta"] = table.eta;
  j["kind"] = table.kind;
  j["seed"] = table.seed;
  std::vector<std::string> names;
  names.reserve(table.assignments.size());
  for (std::uint32_t mask : table.assignments) names.push_back(pattern_name(mask, modalities));
  j["assignments"] = names;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_missing_table: cannot open " + path.string());
  f << j.dump(2) << "\n";
}

MissingTable load_missing_table(const std::filesystem::path& path, const std::vector<ModalitySpec>& modalities) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_missing_table: cannot open " + path.string());
  const json j = json::parse(f);
  MissingTable table;
  table.eta = j.at("eta").get<double>();
  table.kind = j.at("kind").get<std::string>();
  table.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& name : j.at("assignments")) {
    table.assignments.push_back(parse_pattern(name.get<std::string>(), modalities));
  }
  return table;
}

}  // namespace aoept
