#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "blocks/mamba_block.hpp"
#include "training/tasks.hpp"

namespace training {

enum class ModelKind { classifier, encdec };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::classifier;
  blocks::Variant encoder_variant = blocks::Variant::bidirectional;
  std::size_t vocab = 16;
  std::size_t d_in = 64;
  std::size_t n_state = 16;
  std::size_t expand = 4;
  std::size_t conv_width = 4;
  double dropout_p = 0.2;
  std::size_t n_layers = 2;
  std::size_t dec_layers = 2;  // encdec only
  std::size_t n_heads = 4;     // decoder cross-attention
  std::size_t out_slots = 1;   // classifier: tokens read out of the final position
  bool selective = true;
  ssm::ScanExec scan{};

  blocks::BlockConfig block_config() const;
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

class Model {
 public:
  virtual ~Model() = default;

  // Traced loss for one sample. logits_out, when given, receives the logits
  // value (classifier: out_slots x vocab; encdec: seq_len x vocab).
  virtual numerics::Var loss(numerics::Tape& tape, const Sample& sample,
                             blocks::RunMode mode, numerics::Rng* dropout_rng,
                             numerics::Tensor* logits_out) = 0;
  virtual double accuracy(const numerics::Tensor& logits, const Sample& sample) const = 0;
  virtual void visit_params(const blocks::ParamVisitor& fn) = 0;

  const ModelConfig& config() const { return cfg_; }

  double eval_loss(const Sample& sample, double* accuracy_out);

 protected:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  ModelConfig cfg_;
};

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t init_seed);

// Checkpoint: key=value architecture header, a "---" separator line, then the
// binary weight records. Round-trips bit-exactly.
void save_model(Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

// Moves every parameter to a generic (uniform) point. Gradient checks use
// this so zero-initialized output projections do not mask inner paths.
void randomize_parameters(Model& model, numerics::Rng& rng, double scale = 0.4);

}  // namespace training
