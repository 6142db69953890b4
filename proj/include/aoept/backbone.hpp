#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aoept/dataset.hpp"
#include "aoept/graph.hpp"
#include "aoept/optim.hpp"
#include "aoept/tensor.hpp"

namespace aoept {

struct BackboneConfig {
  std::size_t layers = 4;  // L
  std::size_t dim = 32;    // d
  std::size_t heads = 4;
  std::size_t mlp_hidden = 64;
  std::vector<ModalitySpec> modalities = default_modalities();
  std::size_t num_classes = 4;

  void validate() const;
  std::size_t total_seq() const;                    // sum of modality seq_len
  std::size_t modality_offset(std::size_t m) const; // row offset of modality m in the content block
};

// Per-row tag: a modality index, or kPromptTag for prompt rows. Prompt rows,
// when present, occupy the leading positions.
constexpr int kPromptTag = -1;

struct TokenBatch {
  Tensor tokens;  // [S x d], one sample
  std::vector<int> modality_tag;
  std::size_t prompt_count = 0;
};

// Single-stream encoder F = f^L o ... o f^1 over the concatenated modality
// token sequence, with pre-norm multi-head self-attention layers.
class Backbone {
 public:
  Backbone(BackboneConfig cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void freeze();
  std::string checksum() const;  // SHA-256 over all parameters in registry order
  ParamSet parameters();
  std::size_t parameter_count() const;

  // Token + modality-type + positional embeddings; prompt_count = 0. The
  // sample must already carry placeholder ids for its missing modalities.
  // Prompt tokens never pass through here and get no positional embedding.
  TokenBatch embed(Graph& g, const Sample& sample) const;

  TokenBatch layer_forward(Graph& g, std::size_t layer, const TokenBatch& batch) const;

  // Mean over the rows tagged with `tag` (a modality index, or kPromptTag).
  static Tensor pool_modality(Graph& g, const TokenBatch& batch, int tag);

  // Row-stochastic attention matrices of one layer, stacked per head; a
  // diagnostics hook, not part of the forward path.
  std::vector<Tensor> attention_probs(Graph& g, std::size_t layer, const TokenBatch& batch) const;

  void save(const std::filesystem::path& dir) const;
  static Backbone load(const std::filesystem::path& dir);

 private:
  struct EncoderLayer {
    Tensor wq, wk, wv, wo, bq, bk, bv, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  BackboneConfig cfg_;
  bool frozen_ = false;
  std::vector<Tensor> tok_emb_;  // per modality, [(vocab+1) x d]; last row is the placeholder
  Tensor type_emb_;              // [K x d]
  Tensor pos_emb_;               // [total_seq x d]
  std::vector<EncoderLayer> layers_;

  Tensor attention(Graph& g, const EncoderLayer& layer, const Tensor& x) const;
  ParamSet parameters_unchecked() const;
};

struct PretrainResult {
  Backbone backbone;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;  // on the modality-complete training data
  std::string checksum;
};

// Trains all backbone parameters plus a throwaway linear classifier with
// cross-entropy on modality-complete data, then freezes the backbone.
PretrainResult pretrain_backbone(const BackboneConfig& cfg, const std::vector<Sample>& complete_data,
                                 std::size_t epochs, std::uint64_t seed, double lr = 3e-3);

}  // namespace aoept
