#include "training/model.hpp"

#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

#include "numerics/checkpoint.hpp"

namespace training {

using blocks::BiMambaLayer;
using blocks::DecoderBlock;
using blocks::Embedding;
using blocks::LayerNorm;
using blocks::Linear;
using blocks::MambaBlock;
using blocks::ParamVisitor;
using blocks::RunMode;
using numerics::ContractError;
using numerics::IoError;
using numerics::NumericError;
using numerics::Rng;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

const char* model_kind_name(ModelKind k) {
  return k == ModelKind::classifier ? "classifier" : "encdec";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "classifier") return ModelKind::classifier;
  if (name == "encdec") return ModelKind::encdec;
  throw ContractError("unknown model kind '" + name + "'");
}

blocks::BlockConfig ModelConfig::block_config() const {
  blocks::BlockConfig c;
  c.d_in = d_in;
  c.n_state = n_state;
  c.expand = expand;
  c.conv_width = conv_width;
  c.dropout_p = dropout_p;
  c.n_heads = n_heads;
  c.selective = selective;
  c.scan = scan;
  return c;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["kind"] = model_kind_name(kind);
  kv["variant"] = blocks::variant_name(encoder_variant);
  kv["vocab"] = std::to_string(vocab);
  kv["d_in"] = std::to_string(d_in);
  kv["n_state"] = std::to_string(n_state);
  kv["expand"] = std::to_string(expand);
  kv["conv_width"] = std::to_string(conv_width);
  std::ostringstream dp;
  dp << dropout_p;
  kv["dropout"] = dp.str();
  kv["n_layers"] = std::to_string(n_layers);
  kv["dec_layers"] = std::to_string(dec_layers);
  kv["n_heads"] = std::to_string(n_heads);
  kv["out_slots"] = std::to_string(out_slots);
  kv["selective"] = selective ? "1" : "0";
  kv["scan_parallel"] = scan.parallel ? "1" : "0";
  kv["scan_chunk"] = std::to_string(scan.chunk);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("model header: missing key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.kind = model_kind_from_name(need("kind"));
  c.encoder_variant = blocks::variant_from_name(need("variant"));
  c.vocab = std::stoul(need("vocab"));
  c.d_in = std::stoul(need("d_in"));
  c.n_state = std::stoul(need("n_state"));
  c.expand = std::stoul(need("expand"));
  c.conv_width = std::stoul(need("conv_width"));
  c.dropout_p = std::stod(need("dropout"));
  c.n_layers = std::stoul(need("n_layers"));
  c.dec_layers = std::stoul(need("dec_layers"));
  c.n_heads = std::stoul(need("n_heads"));
  c.out_slots = std::stoul(need("out_slots"));
  c.selective = need("selective") == "1";
  c.scan.parallel = need("scan_parallel") == "1";
  c.scan.chunk = std::stoul(need("scan_chunk"));
  return c;
}

double Model::eval_loss(const Sample& sample, double* accuracy_out) {
  Tape tape;
  Tensor logits;
  Var l = loss(tape, sample, RunMode::eval, nullptr, &logits);
  if (accuracy_out != nullptr) *accuracy_out = accuracy(logits, sample);
  return tape.value(l)[0];
}

namespace {

// Uni- or bidirectional encoder stack over embedded tokens.
struct EncoderStack {
  std::vector<MambaBlock> uni;
  std::vector<BiMambaLayer> bi;
  bool bidirectional = false;

  void init(const ModelConfig& cfg, Rng& rng) {
    bidirectional = cfg.encoder_variant == blocks::Variant::bidirectional;
    blocks::BlockConfig bc = cfg.block_config();
    bc.variant = cfg.encoder_variant;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      if (bidirectional) {
        bi.emplace_back();
        bi.back().init(bc, rng);
      } else {
        uni.emplace_back();
        uni.back().init(bc, rng);
      }
    }
  }

  Var forward(Tape& t, Var x, RunMode mode, Rng* drop) {
    const std::size_t depth = bidirectional ? bi.size() : uni.size();
    for (std::size_t i = 0; i < depth; ++i) {
      try {
        x = bidirectional ? bi[i].forward(t, x, mode, drop)
                          : uni[i].forward(t, x, mode, drop);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (encoder block " +
                           std::to_string(i) + ")");
      }
    }
    return x;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < uni.size(); ++i) {
      uni[i].visit(prefix + ".block" + std::to_string(i), fn);
    }
    for (std::size_t i = 0; i < bi.size(); ++i) {
      bi[i].visit(prefix + ".block" + std::to_string(i), fn);
    }
  }
};

class ClassifierModel final : public Model {
 public:
  ClassifierModel(ModelConfig cfg, std::uint64_t init_seed) : Model(std::move(cfg)) {
    Rng rng(numerics::derive_seed(init_seed, /*tag=*/0x6d6f64656cULL));
    embed_.init(cfg_.vocab, cfg_.d_in, rng);
    stack_.init(cfg_, rng);
    final_norm_.init(cfg_.d_in);
    head_.init(cfg_.out_slots * cfg_.vocab, cfg_.d_in, rng, /*zero_init=*/false,
               /*with_bias=*/true);
  }

  Var loss(Tape& tape, const Sample& sample, RunMode mode, Rng* drop,
           Tensor* logits_out) override {
    Var x = embed_.forward(tape, sample.inputs);
    x = stack_.forward(tape, x, mode, drop);
    x = final_norm_.forward(tape, x);
    Var last = tape.row(x, sample.inputs.size() - 1);
    Var logits = tape.reshape(head_.forward(tape, last), {cfg_.out_slots, cfg_.vocab});
    if (logits_out != nullptr) *logits_out = tape.value(logits);
    return blocks::cross_entropy_mean_op(tape, logits, sample.targets);
  }

  double accuracy(const Tensor& logits, const Sample& sample) const override {
    std::size_t correct = 0;
    for (std::size_t s = 0; s < cfg_.out_slots; ++s) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < cfg_.vocab; ++c) {
        if (logits.at(s, c) > logits.at(s, best)) best = c;
      }
      if (static_cast<int>(best) == sample.targets[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(cfg_.out_slots);
  }

  void visit_params(const ParamVisitor& fn) override {
    embed_.visit("embed", fn);
    stack_.visit("enc", fn);
    final_norm_.visit("final_norm", fn);
    head_.visit("head", fn);
  }

 private:
  Embedding embed_;
  EncoderStack stack_;
  LayerNorm final_norm_;
  Linear head_;
};

class EncDecModel final : public Model {
 public:
  EncDecModel(ModelConfig cfg, std::uint64_t init_seed) : Model(std::move(cfg)) {
    Rng rng(numerics::derive_seed(init_seed, /*tag=*/0x656e63646563ULL));
    src_embed_.init(cfg_.vocab, cfg_.d_in, rng);
    enc_.init(cfg_, rng);
    enc_norm_.init(cfg_.d_in);
    tgt_embed_.init(cfg_.vocab, cfg_.d_in, rng);
    blocks::BlockConfig bc = cfg_.block_config();
    bc.variant = blocks::Variant::decoder;
    for (std::size_t i = 0; i < cfg_.dec_layers; ++i) {
      dec_.emplace_back();
      dec_.back().init(bc, rng);
    }
    dec_norm_.init(cfg_.d_in);
    head_.init(cfg_.vocab, cfg_.d_in, rng, /*zero_init=*/false, /*with_bias=*/true);
  }

  Var loss(Tape& tape, const Sample& sample, RunMode mode, Rng* drop,
           Tensor* logits_out) override {
    Var enc = src_embed_.forward(tape, sample.inputs);
    enc = enc_.forward(tape, enc, mode, drop);
    enc = enc_norm_.forward(tape, enc);

    Var y = tgt_embed_.forward(tape, sample.dec_inputs);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      try {
        y = dec_[i].forward(tape, y, enc, mode, drop);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (decoder block " +
                           std::to_string(i) + ")");
      }
    }
    y = dec_norm_.forward(tape, y);
    Var logits = head_.forward(tape, y);
    if (logits_out != nullptr) *logits_out = tape.value(logits);
    return blocks::cross_entropy_mean_op(tape, logits, sample.targets);
  }

  double accuracy(const Tensor& logits, const Sample& sample) const override {
    const std::size_t len = sample.targets.size();
    std::size_t correct = 0;
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < cfg_.vocab; ++c) {
        if (logits.at(t, c) > logits.at(t, best)) best = c;
      }
      if (static_cast<int>(best) == sample.targets[t]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(len);
  }

  void visit_params(const ParamVisitor& fn) override {
    src_embed_.visit("src_embed", fn);
    enc_.visit("enc", fn);
    enc_norm_.visit("enc_norm", fn);
    tgt_embed_.visit("tgt_embed", fn);
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      dec_[i].visit("dec.block" + std::to_string(i), fn);
    }
    dec_norm_.visit("dec_norm", fn);
    head_.visit("head", fn);
  }

 private:
  Embedding src_embed_;
  EncoderStack enc_;
  LayerNorm enc_norm_;
  Embedding tgt_embed_;
  std::vector<DecoderBlock> dec_;
  LayerNorm dec_norm_;
  Linear head_;
};

}  // namespace

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t init_seed) {
  if (cfg.kind == ModelKind::classifier) {
    return std::make_unique<ClassifierModel>(cfg, init_seed);
  }
  return std::make_unique<EncDecModel>(cfg, init_seed);
}

void save_model(Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_model: cannot open " + path.string());
  for (const auto& [k, v] : model.config().to_kv()) {
    os << k << '=' << v << '\n';
  }
  os << "---\n";
  numerics::checkpoint::NamedTensors records;
  model.visit_params([&](const std::string& name, numerics::Param& p) {
    records.emplace_back(name, p.value);
  });
  numerics::checkpoint::write_records(os, records);
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_model: cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  bool separated = false;
  while (std::getline(is, line)) {
    if (line == "---") {
      separated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("model header: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!separated) throw IoError("model header: missing separator");
  auto model = build_model(ModelConfig::from_kv(kv), /*init_seed=*/0);
  auto records = numerics::checkpoint::read_records(is);
  std::map<std::string, Tensor*> by_name;
  for (auto& [name, tensor] : records) by_name[name] = &tensor;
  std::size_t assigned = 0;
  model->visit_params([&](const std::string& name, numerics::Param& p) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
    if (it->second->shape() != p.value.shape()) {
      throw IoError("checkpoint: shape mismatch for '" + name + "'");
    }
    p.value = *it->second;
    p.zero_grad();
    ++assigned;
  });
  if (assigned != records.size()) {
    throw IoError("checkpoint: " + std::to_string(records.size() - assigned) +
                  " unused tensor records");
  }
  return model;
}

void randomize_parameters(Model& model, numerics::Rng& rng, double scale) {
  model.visit_params([&](const std::string&, numerics::Param& p) {
    for (auto& v : p.value.values()) v = rng.uniform(-scale, scale);
    p.zero_grad();
  });
}

}  // namespace training
