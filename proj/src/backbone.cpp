#include "aoept/backbone.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "aoept/serialize.hpp"

namespace aoept {

using nlohmann::json;

void BackboneConfig::validate() const {
  if (layers < 2) throw std::invalid_argument("BackboneConfig: need at least 2 layers");
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("BackboneConfig: dim must be divisible by heads");
  if (mlp_hidden == 0) throw std::invalid_argument("BackboneConfig: mlp_hidden must be >= 1");
  if (modalities.size() < 2) throw std::invalid_argument("BackboneConfig: need at least 2 modalities");
  for (const ModalitySpec& m : modalities) {
    if (m.seq_len == 0) throw std::invalid_argument("BackboneConfig: seq_len must be >= 1");
  }
}

std::size_t BackboneConfig::total_seq() const {
  std::size_t s = 0;
  for (const ModalitySpec& m : modalities) s += m.seq_len;
  return s;
}

std::size_t BackboneConfig::modality_offset(std::size_t m) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < m; ++i) off += modalities[i].seq_len;
  return off;
}

Backbone::Backbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.dim;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (const ModalitySpec& m : cfg_.modalities) {
    tok_emb_.push_back(Tensor::randn({m.vocab + 1, d}, rng, 0.02, true));
  }
  type_emb_ = Tensor::randn({cfg_.modalities.size(), d}, rng, 0.02, true);
  pos_emb_ = Tensor::randn({cfg_.total_seq(), d}, rng, 0.02, true);
  layers_.resize(cfg_.layers);
  for (EncoderLayer& l : layers_) {
    l.wq = Tensor::randn({d, d}, rng, w_std, true);
    l.wk = Tensor::randn({d, d}, rng, w_std, true);
    l.wv = Tensor::randn({d, d}, rng, w_std, true);
    l.wo = Tensor::randn({d, d}, rng, w_std, true);
    l.bq = Tensor::zeros({d}, true);
    l.bk = Tensor::zeros({d}, true);
    l.bv = Tensor::zeros({d}, true);
    l.bo = Tensor::zeros({d}, true);
    l.ln1_g = Tensor({d}, 1.0, true);
    l.ln1_b = Tensor::zeros({d}, true);
    l.ln2_g = Tensor({d}, 1.0, true);
    l.ln2_b = Tensor::zeros({d}, true);
    l.mlp_w1 = Tensor::randn({d, cfg_.mlp_hidden}, rng, w_std, true);
    l.mlp_b1 = Tensor::zeros({cfg_.mlp_hidden}, true);
    l.mlp_w2 = Tensor::randn({cfg_.mlp_hidden, d}, rng, w_std, true);
    l.mlp_b2 = Tensor::zeros({d}, true);
  }
}

ParamSet Backbone::parameters_unchecked() const {
  ParamSet ps;
  auto* self = const_cast<Backbone*>(this);
  for (std::size_t m = 0; m < cfg_.modalities.size(); ++m) {
    ps.add("embed.tok." + cfg_.modalities[m].name, &self->tok_emb_[m]);
  }
  ps.add("embed.type", &self->type_emb_);
  ps.add("embed.pos", &self->pos_emb_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    EncoderLayer& l = self->layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    ps.add(p + "attn.wq", &l.wq);
    ps.add(p + "attn.wk", &l.wk);
    ps.add(p + "attn.wv", &l.wv);
    ps.add(p + "attn.wo", &l.wo);
    ps.add(p + "attn.bq", &l.bq);
    ps.add(p + "attn.bk", &l.bk);
    ps.add(p + "attn.bv", &l.bv);
    ps.add(p + "attn.bo", &l.bo);
    ps.add(p + "ln1.g", &l.ln1_g);
    ps.add(p + "ln1.b", &l.ln1_b);
    ps.add(p + "ln2.g", &l.ln2_g);
    ps.add(p + "ln2.b", &l.ln2_b);
    ps.add(p + "mlp.w1", &l.mlp_w1);
    ps.add(p + "mlp.b1", &l.mlp_b1);
    ps.add(p + "mlp.w2", &l.mlp_w2);
    ps.add(p + "mlp.b2", &l.mlp_b2);
  }
  return ps;
}

ParamSet Backbone::parameters() { return parameters_unchecked(); }

std::size_t Backbone::parameter_count() const { return parameters_unchecked().total_elements(); }

void Backbone::freeze() {
  for (const auto& [name, t] : parameters_unchecked().entries()) t->set_requires_grad(false);
  frozen_ = true;
}

std::string Backbone::checksum() const { return params_checksum(parameters_unchecked()); }

TokenBatch Backbone::embed(Graph& g, const Sample& sample) const {
  if (sample.tokens.size() != cfg_.modalities.size()) {
    throw std::invalid_argument("embed: sample has wrong modality count");
  }
  std::vector<Tensor> parts;
  std::vector<int> tags;
  std::vector<std::size_t> type_ids;
  for (std::size_t m = 0; m < cfg_.modalities.size(); ++m) {
    const ModalitySpec& spec = cfg_.modalities[m];
    const std::vector<std::size_t>& ids = sample.tokens[m];
    if (ids.size() != spec.seq_len) {
      throw std::invalid_argument("embed: token list for " + spec.name + " has wrong length");
    }
    for (std::size_t id : ids) {
      if (id > spec.vocab) {
        throw std::invalid_argument("embed: token id " + std::to_string(id) + " out of vocabulary for " +
                                    spec.name);
      }
    }
    parts.push_back(g.gather_rows(tok_emb_[m], ids));
    for (std::size_t i = 0; i < spec.seq_len; ++i) {
      tags.push_back(static_cast<int>(m));
      type_ids.push_back(m);
    }
  }
  Tensor x = g.concat_rows(parts);
  x = g.add(x, g.gather_rows(type_emb_, type_ids));
  x = g.add(x, pos_emb_);
  return TokenBatch{std::move(x), std::move(tags), 0};
}

Tensor Backbone::attention(Graph& g, const EncoderLayer& l, const Tensor& x) const {
  const std::size_t dh = cfg_.dim / cfg_.heads;
  Tensor q = g.add_rowwise(g.matmul(x, l.wq), l.bq);
  Tensor k = g.add_rowwise(g.matmul(x, l.wk), l.bk);
  Tensor v = g.add_rowwise(g.matmul(x, l.wv), l.bv);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    Tensor qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor probs = g.softmax(scores, 1);
    heads.push_back(g.matmul(probs, vh));
  }
  Tensor ctx = g.concat_cols(heads);
  return g.add_rowwise(g.matmul(ctx, l.wo), l.bo);
}

TokenBatch Backbone::layer_forward(Graph& g, std::size_t layer, const TokenBatch& batch) const {
  if (layer >= layers_.size()) throw std::invalid_argument("layer_forward: layer index out of range");
  const EncoderLayer& l = layers_[layer];
  Tensor x = batch.tokens;
  x = g.add(x, attention(g, l, g.layer_norm(batch.tokens, l.ln1_g, l.ln1_b)));
  x = g.add(x, [&] {
    Tensor h = g.layer_norm(x, l.ln2_g, l.ln2_b);
    h = g.gelu(g.add_rowwise(g.matmul(h, l.mlp_w1), l.mlp_b1));
    return g.add_rowwise(g.matmul(h, l.mlp_w2), l.mlp_b2);
  }());
  return TokenBatch{std::move(x), batch.modality_tag, batch.prompt_count};
}

Tensor Backbone::pool_modality(Graph& g, const TokenBatch& batch, int tag) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < batch.modality_tag.size(); ++i) {
    if (batch.modality_tag[i] == tag) idx.push_back(i);
  }
  if (idx.empty()) {
    throw std::invalid_argument("pool_modality: no tokens tagged " + std::to_string(tag));
  }
  return g.mean_rows(g.gather_rows(batch.tokens, idx));
}

std::vector<Tensor> Backbone::attention_probs(Graph& g, std::size_t layer, const TokenBatch& batch) const {
  if (layer >= layers_.size()) throw std::invalid_argument("attention_probs: layer index out of range");
  const EncoderLayer& l = layers_[layer];
  Tensor x = g.layer_norm(batch.tokens, l.ln1_g, l.ln1_b);
  const std::size_t dh = cfg_.dim / cfg_.heads;
  Tensor q = g.add_rowwise(g.matmul(x, l.wq), l.bq);
  Tensor k = g.add_rowwise(g.matmul(x, l.wk), l.bk);
  std::vector<Tensor> out;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    Tensor qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    Tensor scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    out.push_back(g.softmax(scores, 1));
  }
  return out;
}

void to_json(json& j, const ModalitySpec& m) { j = json{{"name", m.name}, {"vocab", m.vocab}, {"seq_len", m.seq_len}}; }

void from_json(const json& j, ModalitySpec& m) {
  j.at("name").get_to(m.name);
  j.at("vocab").get_to(m.vocab);
  j.at("seq_len").get_to(m.seq_len);
}

void to_json(json& j, const BackboneConfig& c) {
  j = json{{"layers", c.layers},         {"dim", c.dim},
           {"heads", c.heads},           {"mlp_hidden", c.mlp_hidden},
           {"modalities", c.modalities}, {"num_classes", c.num_classes}};
}

void from_json(const json& j, BackboneConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("dim").get_to(c.dim);
  j.at("heads").get_to(c.heads);
  j.at("mlp_hidden").get_to(c.mlp_hidden);
  j.at("modalities").get_to(c.modalities);
  j.at("num_classes").get_to(c.num_classes);
}

void Backbone::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const ParamSet ps = parameters_unchecked();
  json manifest;
  manifest["config"] = cfg_;
  manifest["frozen"] = frozen_;
  manifest["checksum"] = checksum();
  std::vector<std::string> names;
  for (const auto& [name, t] : ps.entries()) {
    names.push_back(name);
    save_tensor(dir / (name + ".aotn"), *t);
  }
  manifest["params"] = names;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Backbone Backbone::load(const std::filesystem::path& dir) {
  const json manifest = json::parse(read_text_file(dir / "manifest.json"));
  BackboneConfig cfg = manifest.at("config").get<BackboneConfig>();
  Backbone bb(cfg, 0);
  ParamSet ps = bb.parameters();
  for (const auto& name : manifest.at("params")) {
    Tensor* dst = ps.find(name.get<std::string>());
    if (dst == nullptr) throw std::runtime_error("Backbone::load: unknown parameter " + name.get<std::string>());
    Tensor loaded = load_tensor(dir / (name.get<std::string>() + ".aotn"));
    if (loaded.shape() != dst->shape()) throw std::runtime_error("Backbone::load: shape mismatch for " + name.get<std::string>());
    dst->data() = loaded.data();
  }
  if (manifest.at("frozen").get<bool>()) bb.freeze();
  const std::string want = manifest.at("checksum").get<std::string>();
  if (bb.checksum() != want) throw std::runtime_error("Backbone::load: checksum mismatch");
  return bb;
}

PretrainResult pretrain_backbone(const BackboneConfig& cfg, const std::vector<Sample>& complete_data,
                                 std::size_t epochs, std::uint64_t seed, double lr) {
  if (complete_data.empty()) throw std::invalid_argument("pretrain_backbone: empty dataset");
  for (const Sample& s : complete_data) {
    if (s.missing_mask != 0) throw std::invalid_argument("pretrain_backbone: dataset must be modality-complete");
  }
  Backbone bb(cfg, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  Tensor head_w = Tensor::randn({cfg.dim, cfg.num_classes}, rng, 0.02, true);
  Tensor head_b = Tensor::zeros({cfg.num_classes}, true);
  ParamSet params = bb.parameters();
  params.add("head.w", &head_w);
  params.add("head.b", &head_b);
  AdamW opt(params, {.lr = lr, .wd = 1e-2});

  const std::size_t batch_size = 32;
  std::vector<std::size_t> order(complete_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto logits_of = [&](Graph& g, const Sample& s) {
    TokenBatch batch = bb.embed(g, s);
    for (std::size_t l = 0; l < cfg.layers; ++l) batch = bb.layer_forward(g, l, batch);
    Tensor pooled = g.mean_rows(batch.tokens);
    Tensor row = g.matmul(g.stack_rows({pooled}), head_w);
    return g.add_rowwise(row, head_b);  // [1 x C]
  };

  PretrainResult result{std::move(bb), {}, 0.0, ""};
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      try {
        Graph g;
        std::vector<Tensor> rows;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
          const Sample& s = complete_data[order[i]];
          Tensor lg = logits_of(g, s);
          rows.push_back(g.slice_rows(lg, 0, 1));
          labels.push_back(s.label);
        }
        Tensor loss = g.cross_entropy(g.concat_rows(rows), labels);
        epoch_loss += loss.item();
        ++steps;
        params.zero_grad();
        g.backward(loss);
        opt.step();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("pretrain_backbone: numeric failure at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(start / batch_size) + ": " + e.what());
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(steps));
  }

  std::size_t correct = 0;
  for (const Sample& s : complete_data) {
    Graph g(false);
    Tensor lg = logits_of(g, s);
    std::size_t best = 0;
    for (std::size_t c = 1; c < cfg.num_classes; ++c) {
      if (lg[c] > lg[best]) best = c;
    }
    if (best == s.label) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(complete_data.size());
  result.backbone.freeze();
  result.checksum = result.backbone.checksum();
  return result;
}

}  // namespace aoept
